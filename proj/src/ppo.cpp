#include "plus/ppo.hpp"

#include <algorithm>
#include <cmath>

#include "plus/losses.hpp"

namespace plus::rl {

namespace {

std::vector<int> policy_input(const mw::DatasetRecord& rec, const mw::Vocabulary& vocab) {
    std::vector<int> ctx = mw::render_context_tokens(rec.context, vocab);
    ctx.push_back(mw::SUM);
    return ctx;
}

std::vector<int> summary_prefix(const std::vector<int>& z) {
    std::vector<int> p = {mw::SUM};
    p.insert(p.end(), z.begin(), z.end());
    p.push_back(mw::SEP);
    return p;
}

double pair_loss_with_summary(const RmBundle& rm, const mw::DatasetRecord& rec, const std::vector<int>& z) {
    Tape t;
    std::vector<int> prefix = summary_prefix(z);
    Tape::NodeId rc = rm.rm.score(t, prefix, rec.eval.chosen.tokens);
    Tape::NodeId rr = rm.rm.score(t, prefix, rec.eval.rejected.tokens);
    return t.value(btl_loss(t, rc, rr)).data[0];
}

}  // namespace

RolloutBatch rollout(const sm::Policy& pi, const sm::Policy& pi_ref, const sm::Critic& critic, const RmBundle& rm,
                     const std::vector<const mw::DatasetRecord*>& batch, const mw::Vocabulary& vocab,
                     const PpoConfig& cfg, int tag, Rng& rng) {
    RolloutBatch out;
    out.tag = tag;
    for (const auto* rec : batch) {
        try {
            Trajectory tr;
            tr.rec = rec;
            tr.ctx = policy_input(*rec, vocab);
            sm::SampleResult s = pi.sample_summary(tr.ctx, cfg.sample_temperature, rng);
            tr.z = s.z;
            tr.old_logp = s.logp;

            Tape t;
            const Tensor& kl = t.value(sm::z_kl(t, pi, pi_ref, tr.ctx, tr.z));
            tr.kl.assign(kl.data.begin(), kl.data.end());
            Tape tv;
            const Tensor& v = tv.value(critic.values(tv, tr.ctx, tr.z));
            tr.values.assign(v.data.begin(), v.data.end());

            tr.terminal_reward = static_cast<float>(-pair_loss_with_summary(rm, *rec, tr.z));
            tr.rewards.resize(tr.z.size());
            for (size_t i = 0; i < tr.z.size(); ++i)
                tr.rewards[i] = static_cast<float>(-cfg.kl_coef * tr.kl[i]);
            tr.rewards.back() += tr.terminal_reward;
            out.trajs.push_back(std::move(tr));
        } catch (const NumericError&) {
            ++out.dropped;
        }
    }
    return out;
}

void compute_advantages(RolloutBatch& batch, const PpoConfig& cfg) {
    for (auto& tr : batch.trajs) {
        const size_t n = tr.z.size();
        tr.adv.assign(n, 0.0f);
        tr.ret.assign(n, 0.0f);
        double gae = 0.0;
        for (size_t i = n; i-- > 0;) {
            const double next_v = i + 1 < n ? tr.values[i + 1] : 0.0;
            const double delta = tr.rewards[i] + cfg.gamma * next_v - tr.values[i];
            gae = delta + cfg.gamma * cfg.lambda * gae;
            tr.adv[i] = static_cast<float>(gae);
            tr.ret[i] = static_cast<float>(gae + tr.values[i]);
        }
    }
    if (!cfg.norm_adv) return;
    double sum = 0.0, sq = 0.0;
    std::int64_t n = 0;
    for (const auto& tr : batch.trajs)
        for (float a : tr.adv) {
            sum += a;
            sq += static_cast<double>(a) * a;
            ++n;
        }
    if (n < 2) return;
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(sq / n - mean * mean, 0.0)) + 1e-8;
    for (auto& tr : batch.trajs)
        for (float& a : tr.adv) a = static_cast<float>((a - mean) / sd);
}

PpoDiagnostics ppo_update(sm::Policy& pi, sm::Critic& critic, const RolloutBatch& batch, const PpoConfig& cfg,
                          Adam& opt_actor, Adam& opt_critic, std::uint64_t shuffle_seed) {
    PpoDiagnostics diag;
    if (batch.trajs.empty()) return diag;
    const int n = static_cast<int>(batch.trajs.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    auto actor_params = pi.params.all();
    auto critic_params = critic.params.all();

    double ratio_sum = 0.0, obj_sum = 0.0, closs_sum = 0.0;
    std::int64_t tok_total = 0, tok_clipped = 0;
    int updates = 0;

    for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
        Rng shuf(Rng::mix(shuffle_seed, static_cast<std::uint64_t>(epoch)));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuf.uniform_int(i + 1))]);

        std::int64_t ep_tok = 0, ep_clip = 0;
        for (int start = 0; start < n; start += cfg.minibatch) {
            const int bn = std::min(cfg.minibatch, n - start);
            for (int j = 0; j < bn; ++j) {
                const auto& tr = batch.trajs[static_cast<size_t>(order[static_cast<size_t>(start + j)])];
                const int tz = static_cast<int>(tr.z.size());

                Tape t;
                Tape::NodeId new_lp = pi.z_logprobs(t, tr.ctx, tr.z);
                Tensor old_lp({tz}, std::vector<float>(tr.old_logp.begin(), tr.old_logp.end()));
                Tape::NodeId ratio = t.exp(t.sub(new_lp, t.constant(old_lp)));
                Tensor adv({tz}, std::vector<float>(tr.adv.begin(), tr.adv.end()));
                Tape::NodeId obj = t.mean_all(t.ppo_clip_objective(ratio, adv, cfg.clip_eps));
                Tape::NodeId loss = t.scale(obj, -1.0f);
                for (int k = 0; k < tz; ++k) {
                    const float r = t.value(ratio).data[static_cast<size_t>(k)];
                    ratio_sum += r;
                    ++ep_tok;
                    if (r < 1.0f - cfg.clip_eps || r > 1.0f + cfg.clip_eps) ++ep_clip;
                }
                obj_sum += t.value(obj).data[0];
                t.backward(loss);

                Tape tc;
                Tape::NodeId v = critic.values(tc, tr.ctx, tr.z);
                Tape::NodeId diff = tc.sub(v, tc.constant(Tensor({tz}, std::vector<float>(tr.ret.begin(), tr.ret.end()))));
                Tape::NodeId closs = tc.mean_all(tc.mul(diff, diff));
                closs_sum += tc.value(closs).data[0];
                tc.backward(closs);
            }
            const float inv = 1.0f / static_cast<float>(bn);
            for (Param* p : actor_params)
                for (auto& g : p->grad.data) g *= inv;
            for (Param* p : critic_params)
                for (auto& g : p->grad.data) g *= inv;
            opt_actor.step();
            opt_critic.step();
            // identifier rows may sit outside the optimizers; drop their grads
            for (auto& g : pi.trunk.tok_emb->grad.data) g = 0.0f;
            for (auto& g : critic.trunk.tok_emb->grad.data) g = 0.0f;
            ++updates;
        }
        tok_total += ep_tok;
        tok_clipped += ep_clip;
        if (ep_tok > 0 && ep_clip == ep_tok)
            throw DivergenceError("ppo_update: every token clipped for a whole epoch, policy diverged");
    }
    const double samples = static_cast<double>(n) * cfg.ppo_epochs;
    diag.mean_ratio = ratio_sum / std::max<std::int64_t>(tok_total, 1);
    diag.clip_frac = static_cast<double>(tok_clipped) / std::max<std::int64_t>(tok_total, 1);
    diag.actor_obj = obj_sum / samples;
    diag.critic_loss = closs_sum / samples;
    return diag;
}

double rm_step(RmBundle& rm, const RolloutBatch& batch, int expected_tag, const mw::Vocabulary& vocab,
               Adam& opt_rm) {
    if (batch.tag != expected_tag)
        throw ConfigError("rm_step: rollout batch tag " + std::to_string(batch.tag) +
                          " does not match the current iteration " + std::to_string(expected_tag) +
                          " (stale summaries)");
    if (batch.trajs.empty()) return 0.0;
    (void)vocab;
    auto params = rm.trainable_params();
    double loss_sum = 0.0;
    for (const auto& tr : batch.trajs) {
        Tape t;
        std::vector<int> prefix = summary_prefix(tr.z);
        Tape::NodeId rc = rm.rm.score(t, prefix, tr.rec->eval.chosen.tokens);
        Tape::NodeId rr = rm.rm.score(t, prefix, tr.rec->eval.rejected.tokens);
        Tape::NodeId loss = btl_loss(t, rc, rr);
        loss_sum += t.value(loss).data[0];
        t.backward(loss);
    }
    const float inv = 1.0f / static_cast<float>(batch.trajs.size());
    for (Param* p : params)
        for (auto& g : p->grad.data) g *= inv;
    opt_rm.step();
    for (auto& g : rm.rm.trunk.tok_emb->grad.data) g = 0.0f;
    return loss_sum / static_cast<double>(batch.trajs.size());
}

SummaryMap summarize_records(const sm::Policy& pi, const std::vector<const mw::DatasetRecord*>& records,
                             const mw::Vocabulary& vocab) {
    SummaryMap out;
    Rng dummy(0);
    for (const auto* rec : records) {
        if (out.count(rec->user_id)) continue;
        out[rec->user_id] = pi.sample_summary(policy_input(*rec, vocab), 0.0, dummy).z;
    }
    return out;
}

JointState make_joint_state(const JointConfig& cfg) {
    cfg.model.validate();
    if (cfg.epochs < 1 || cfg.rollout_batch < 1)
        throw ConfigError("joint_train: epochs and rollout_batch must be >= 1");
    JointState st;
    st.policy = sm::Policy::make(cfg.model, Rng::mix(cfg.seed, 0xB1));
    st.ref = sm::Policy::make(cfg.model, Rng::mix(cfg.seed, 0xB1));
    sm::copy_params(st.policy.params, st.ref.params);
    st.critic = sm::Critic::make(cfg.model, Rng::mix(cfg.seed, 0xB2));
    st.rm.variant = Variant::Summary;
    st.rm.rm = sm::RewardModel::make(cfg.model, sm::HeadKind::Scalar, false, Rng::mix(cfg.seed, 0xB3));
    st.rm.tok_emb_init = st.rm.rm.trunk.tok_emb->value;
    st.pi_tok_init = st.policy.trunk.tok_emb->value;
    st.vf_tok_init = st.critic.trunk.tok_emb->value;

    // token embeddings are identifiers, not weights: every optimizer skips
    // them so the tied output head keeps emitting whatever the rows hold
    auto without = [](std::vector<Param*> ps, const Param* skip) {
        std::vector<Param*> out;
        for (Param* p : ps)
            if (p != skip) out.push_back(p);
        return out;
    };
    AdamConfig ac;
    ac.lr = static_cast<float>(cfg.actor_lr);
    st.opt_actor = Adam(without(st.policy.params.all(), st.policy.trunk.tok_emb), ac);
    ac.lr = static_cast<float>(cfg.critic_lr);
    st.opt_critic = Adam(without(st.critic.params.all(), st.critic.trunk.tok_emb), ac);
    ac.lr = static_cast<float>(cfg.rm_lr);
    st.opt_rm = Adam(st.rm.trainable_params(), ac);
    return st;
}

void run_joint_epoch(const JointConfig& cfg, const mw::Dataset& ds,
                     const std::vector<const mw::DatasetRecord*>& train,
                     const std::vector<const mw::DatasetRecord*>& probe, JointState& st) {
    if (train.empty()) throw DataError("joint_train: no training records");
    const int epoch = st.next_epoch;

    // augmentation schedule for the identifier embeddings: fresh rows per
    // epoch, shipped rows for the final calibration stretch. The reward model
    // shuffles from the start so its reward favors summaries that literally
    // contain the right token; the summarizer and critic get a warmup on the
    // shipped rows first. The reference policy mirrors the actor's rows so
    // the divergence penalty compares like with like.
    if (cfg.entity_redraw) {
        const int d = cfg.model.d_model;
        const bool augment = epoch < cfg.epochs - cfg.calibrate_epochs;
        if (augment && epoch >= cfg.redraw_warmup) {
            const auto e = static_cast<std::uint64_t>(epoch);
            redraw_entity_rows(st.policy.trunk.tok_emb->value, d, ds.vocab, Rng::mix(cfg.seed, 0xC10000 + e));
            redraw_entity_rows(st.ref.trunk.tok_emb->value, d, ds.vocab, Rng::mix(cfg.seed, 0xC10000 + e));
            redraw_entity_rows(st.critic.trunk.tok_emb->value, d, ds.vocab, Rng::mix(cfg.seed, 0xC20000 + e));
            // each draw is a new reward landscape; the collapse watchdog must
            // not compare against the best reward seen under an earlier draw
            st.best_reward = -1e30;
            st.bad_streak = 0;
        } else {
            st.policy.trunk.tok_emb->value = st.pi_tok_init;
            st.ref.trunk.tok_emb->value = st.pi_tok_init;
            st.critic.trunk.tok_emb->value = st.vf_tok_init;
            if (epoch == cfg.epochs - cfg.calibrate_epochs) {
                st.best_reward = -1e30;
                st.bad_streak = 0;
            }
        }
        if (augment)
            redraw_entity_rows(st.rm.rm, ds.vocab, Rng::mix(cfg.seed, 0xC30000 + static_cast<std::uint64_t>(epoch)));
        else
            st.rm.rm.trunk.tok_emb->value = st.rm.tok_emb_init;
    }

    const int n = static_cast<int>(train.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuf(Rng::mix(cfg.seed, 0xB500 + static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuf.uniform_int(i + 1))]);
    Rng sample_rng(Rng::mix(cfg.seed, 0xB40000 + static_cast<std::uint64_t>(epoch)));

    for (int start = 0; start < n && !st.diverged; start += cfg.rollout_batch, ++st.iter) {
        const int bn = std::min(cfg.rollout_batch, n - start);
        std::vector<const mw::DatasetRecord*> batch(static_cast<size_t>(bn));
        for (int j = 0; j < bn; ++j)
            batch[static_cast<size_t>(j)] = train[static_cast<size_t>(order[static_cast<size_t>(start + j)])];

        RolloutBatch rb =
            rollout(st.policy, st.ref, st.critic, st.rm, batch, ds.vocab, cfg.ppo, st.iter, sample_rng);
        st.dropped += rb.dropped;
        if (rb.trajs.empty()) continue;
        compute_advantages(rb, cfg.ppo);

        IterStats is;
        is.iteration = st.iter;
        double rsum = 0.0, klsum = 0.0;
        std::int64_t ktok = 0;
        for (const auto& tr : rb.trajs) {
            rsum += tr.terminal_reward;
            for (float k : tr.kl) {
                klsum += k;
                ++ktok;
            }
        }
        is.mean_reward = rsum / static_cast<double>(rb.trajs.size());
        is.mean_kl = ktok ? klsum / static_cast<double>(ktok) : 0.0;

        if (cfg.train_actor) {
            PpoDiagnostics d = ppo_update(st.policy, st.critic, rb, cfg.ppo, st.opt_actor, st.opt_critic,
                                          Rng::mix(cfg.seed, 0xB60000 + static_cast<std::uint64_t>(st.iter)));
            is.clip_frac = d.clip_frac;
        }
        is.rm_loss = rm_step(st.rm, rb, st.iter, ds.vocab, st.opt_rm);

        if (cfg.probe_every > 0 && !probe.empty() && st.iter % cfg.probe_every == 0) {
            SummaryMap sums = summarize_records(st.policy, probe, ds.vocab);
            is.probe_accuracy = eval_accuracy(st.rm, probe, ds.vocab, &sums).accuracy;
        }
        st.curves.push_back(is);

        // reward-collapse watchdog: a long streak far below the best seen
        // mean reward halts training with partial results
        st.best_reward = std::max(st.best_reward, is.mean_reward);
        if (is.mean_reward < 1.5 * st.best_reward && st.best_reward < 0.0) {
            if (++st.bad_streak >= cfg.divergence_patience) st.diverged = true;
        } else {
            st.bad_streak = 0;
        }
    }
    ++st.next_epoch;
}

JointResult joint_train(const JointConfig& cfg, const mw::Dataset& ds,
                        const std::vector<const mw::DatasetRecord*>& train,
                        const std::vector<const mw::DatasetRecord*>& probe) {
    if (train.empty()) throw DataError("joint_train: no training records");
    JointState st = make_joint_state(cfg);
    while (st.next_epoch < cfg.epochs && !st.diverged) run_joint_epoch(cfg, ds, train, probe, st);

    JointResult res;
    res.policy = std::move(st.policy);
    res.critic = std::move(st.critic);
    res.rm = std::move(st.rm);
    res.curves = std::move(st.curves);
    res.diverged = st.diverged;
    res.dropped = st.dropped;
    return res;
}

}  // namespace plus::rl
