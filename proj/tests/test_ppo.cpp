#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "plus/losses.hpp"
#include "plus/ppo.hpp"

using namespace plus;
using namespace plus::rl;

namespace {

mw::Dataset tiny_world(std::uint64_t seed = 5) {
    mw::WorldConfig wc = mw::WorldConfig::pets_default();
    wc.topics = {"dog", "cat"};
    wc.topics_ood = {"bird", "rabbit"};
    wc.n_train = 96;
    wc.users_train = 24;
    wc.n_test_seen = 32;
    wc.users_test_seen = 8;
    wc.n_test_ood = 16;
    wc.users_test_ood = 4;
    wc.seed = seed;
    return mw::make_dataset(wc);
}

sm::ModelConfig tiny_model(int vocab) {
    sm::ModelConfig mc;
    mc.d_model = 16;
    mc.heads = 2;
    mc.layers = 1;
    mc.ff = 32;
    mc.vocab_size = vocab;
    mc.max_seq = 192;
    mc.t_sum = 4;
    return mc;
}

// a batch with hand-set rewards/values for exercising the advantage math
RolloutBatch fake_batch(const std::vector<std::vector<float>>& rewards, const std::vector<std::vector<float>>& values) {
    RolloutBatch b;
    b.tag = 0;
    for (size_t i = 0; i < rewards.size(); ++i) {
        Trajectory tr;
        tr.z.assign(rewards[i].size(), 9);
        tr.rewards = rewards[i];
        tr.values = values[i];
        tr.kl.assign(rewards[i].size(), 0.0f);
        b.trajs.push_back(std::move(tr));
    }
    return b;
}

}  // namespace

TEST_CASE("advantages match a brute-force discounted-delta sum") {
    Rng r(31);
    PpoConfig cfg;
    cfg.gamma = 0.97;
    cfg.lambda = 0.9;
    cfg.norm_adv = false;
    std::vector<std::vector<float>> rw, vl;
    for (int e = 0; e < 6; ++e) {
        int n = 1 + r.uniform_int(7);
        std::vector<float> rs, vs;
        for (int i = 0; i < n; ++i) {
            rs.push_back(static_cast<float>(r.normal()));
            vs.push_back(static_cast<float>(r.normal()));
        }
        rw.push_back(rs);
        vl.push_back(vs);
    }
    auto b = fake_batch(rw, vl);
    compute_advantages(b, cfg);
    for (size_t e = 0; e < b.trajs.size(); ++e) {
        const auto& tr = b.trajs[e];
        const size_t n = tr.rewards.size();
        for (size_t t = 0; t < n; ++t) {
            double a = 0.0, w = 1.0;
            for (size_t k = t; k < n; ++k) {
                double next_v = k + 1 < n ? tr.values[k + 1] : 0.0;
                a += w * (tr.rewards[k] + cfg.gamma * next_v - tr.values[k]);
                w *= cfg.gamma * cfg.lambda;
            }
            CHECK(std::abs(a - tr.adv[t]) < 1e-5);
            CHECK(std::abs(tr.ret[t] - (tr.adv[t] + tr.values[t])) < 1e-6);
        }
    }
}

TEST_CASE("terminal-only reward with gamma=lambda=1 spreads to every step") {
    PpoConfig cfg;
    cfg.gamma = 1.0;
    cfg.lambda = 1.0;
    cfg.norm_adv = false;
    auto b = fake_batch({{0, 0, 0, 2.5f}}, {{0, 0, 0, 0}});
    compute_advantages(b, cfg);
    for (float a : b.trajs[0].adv) CHECK(a == doctest::Approx(2.5f));
}

TEST_CASE("lambda=0 reduces to one-step temporal differences") {
    PpoConfig cfg;
    cfg.lambda = 0.0;
    cfg.norm_adv = false;
    auto b = fake_batch({{1.0f, -1.0f, 0.5f}}, {{0.2f, 0.1f, -0.3f}});
    compute_advantages(b, cfg);
    const auto& tr = b.trajs[0];
    CHECK(tr.adv[0] == doctest::Approx(1.0f + tr.values[1] - tr.values[0]));
    CHECK(tr.adv[1] == doctest::Approx(-1.0f + tr.values[2] - tr.values[1]));
    CHECK(tr.adv[2] == doctest::Approx(0.5f - tr.values[2]));
}

TEST_CASE("advantage normalization yields zero mean and unit spread") {
    Rng r(8);
    PpoConfig cfg;
    std::vector<std::vector<float>> rw, vl;
    for (int e = 0; e < 10; ++e) {
        std::vector<float> rs(5), vs(5);
        for (auto& x : rs) x = static_cast<float>(3 * r.normal() + 1);
        for (auto& x : vs) x = static_cast<float>(r.normal());
        rw.push_back(rs);
        vl.push_back(vs);
    }
    auto b = fake_batch(rw, vl);
    compute_advantages(b, cfg);
    double s = 0, sq = 0;
    int n = 0;
    for (auto& tr : b.trajs)
        for (float a : tr.adv) {
            s += a;
            sq += a * a;
            ++n;
        }
    CHECK(std::abs(s / n) < 1e-4);
    CHECK(std::abs(sq / n - 1.0) < 1e-2);
}

TEST_CASE("fresh rollout starts at ratio one with nothing clipped") {
    auto pi = sm::Policy::make(tiny_model(16), 3);
    auto critic = sm::Critic::make(tiny_model(16), 4);
    std::vector<int> ctx = {4, 1, 9, 3, 10, 2, 6};
    Rng r(5);
    RolloutBatch b;
    b.tag = 0;
    for (int i = 0; i < 4; ++i) {
        Trajectory tr;
        tr.ctx = ctx;
        auto s = pi.sample_summary(ctx, 1.0, r);
        tr.z = s.z;
        tr.old_logp = s.logp;
        tr.adv.assign(s.z.size(), 0.5f);
        tr.ret.assign(s.z.size(), 0.0f);
        b.trajs.push_back(std::move(tr));
    }
    PpoConfig cfg;
    cfg.ppo_epochs = 1;
    cfg.minibatch = 8;  // one update covering the whole batch
    AdamConfig ac;
    Adam oa(pi.params.all(), ac), oc(critic.params.all(), ac);
    auto d = ppo_update(pi, critic, b, cfg, oa, oc, 1);
    CHECK(std::abs(d.mean_ratio - 1.0) < 1e-4);
    CHECK(d.clip_frac == 0.0);
    // with ratio == 1 the surrogate equals the mean advantage
    CHECK(std::abs(d.actor_obj - 0.5) < 1e-4);
}

TEST_CASE("zero advantages leave the summarizer untouched") {
    auto pi = sm::Policy::make(tiny_model(16), 3);
    auto critic = sm::Critic::make(tiny_model(16), 4);
    std::vector<int> ctx = {4, 1, 9, 3, 10, 2, 6};
    Rng r(5);
    RolloutBatch b;
    b.tag = 0;
    Trajectory tr;
    tr.ctx = ctx;
    auto s = pi.sample_summary(ctx, 1.0, r);
    tr.z = s.z;
    tr.old_logp = s.logp;
    tr.adv.assign(s.z.size(), 0.0f);
    tr.ret.assign(s.z.size(), 0.3f);
    b.trajs.push_back(std::move(tr));

    std::vector<float> before = pi.params.items[0]->value.data;
    std::vector<float> cbefore = critic.params.items[0]->value.data;
    PpoConfig cfg;
    AdamConfig ac;
    Adam oa(pi.params.all(), ac), oc(critic.params.all(), ac);
    (void)ppo_update(pi, critic, b, cfg, oa, oc, 1);
    CHECK(pi.params.items[0]->value.data == before);
    CHECK(critic.params.items[0]->value.data != cbefore);
}

TEST_CASE("clipped updates steer the policy toward rewarded tokens") {
    auto mc = tiny_model(16);
    mc.t_sum = 2;
    auto pi = sm::Policy::make(mc, 3);
    auto critic = sm::Critic::make(mc, 4);
    std::vector<int> ctx = {6};  // bare summary trigger
    const int good = 9;

    PpoConfig cfg;
    cfg.minibatch = 16;
    cfg.ppo_epochs = 2;
    AdamConfig ac;
    ac.lr = 3e-3;
    Adam oa(pi.params.all(), ac);
    AdamConfig acc;
    Adam oc(critic.params.all(), acc);

    Rng r(21);
    auto hit_rate = [&](int trials, Rng& rr) {
        int hits = 0;
        for (int i = 0; i < trials; ++i) hits += pi.sample_summary(ctx, 1.0, rr).z[0] == good;
        return static_cast<double>(hits) / trials;
    };
    Rng probe(1234);
    double before = hit_rate(300, probe);

    for (int it = 0; it < 50; ++it) {
        RolloutBatch b;
        b.tag = it;
        for (int i = 0; i < 16; ++i) {
            Trajectory tr;
            tr.ctx = ctx;
            auto s = pi.sample_summary(ctx, 1.0, r);
            tr.z = s.z;
            tr.old_logp = s.logp;
            float rew = tr.z[0] == good ? 1.0f : -1.0f;
            tr.rewards.assign(tr.z.size(), 0.0f);
            tr.rewards.back() = rew;
            tr.values.assign(tr.z.size(), 0.0f);
            tr.kl.assign(tr.z.size(), 0.0f);
            b.trajs.push_back(std::move(tr));
        }
        compute_advantages(b, cfg);
        (void)ppo_update(pi, critic, b, cfg, oa, oc, static_cast<std::uint64_t>(it));
    }
    Rng probe2(1234);
    double after = hit_rate(300, probe2);
    CHECK(before < 0.3);
    CHECK(after > before + 0.3);
}

TEST_CASE("rollouts are deterministic and shaped rewards vanish at the reference") {
    auto ds = tiny_world();
    auto mc = tiny_model(ds.vocab.size());
    auto pi = sm::Policy::make(mc, 3);
    auto ref = sm::Policy::make(mc, 3);
    sm::copy_params(pi.params, ref.params);
    auto critic = sm::Critic::make(mc, 4);
    RmBundle rm;
    rm.variant = Variant::Summary;
    rm.rm = sm::RewardModel::make(mc, sm::HeadKind::Scalar, false, 7);

    auto batch = ds.split("train");
    batch.resize(8);
    PpoConfig cfg;
    Rng r1(5), r2(5);
    auto b1 = rollout(pi, ref, critic, rm, batch, ds.vocab, cfg, 0, r1);
    auto b2 = rollout(pi, ref, critic, rm, batch, ds.vocab, cfg, 0, r2);
    REQUIRE(b1.trajs.size() == b2.trajs.size());
    REQUIRE(b1.trajs.size() + b1.dropped == 8);
    for (size_t i = 0; i < b1.trajs.size(); ++i) {
        const auto& a = b1.trajs[i];
        CHECK(a.z == b2.trajs[i].z);
        CHECK(a.rewards == b2.trajs[i].rewards);
        CHECK(a.ctx.back() == mw::SUM);
        // identical policies: no divergence penalty anywhere
        for (size_t t = 0; t + 1 < a.rewards.size(); ++t) CHECK(std::abs(a.rewards[t]) < 1e-6);
        CHECK(a.rewards.back() == doctest::Approx(a.terminal_reward).epsilon(1e-5));
        CHECK(a.terminal_reward < 0.0f);  // a -log-sigmoid loss is positive
    }
}

TEST_CASE("reward-model step demands fresh summaries and learns from good ones") {
    auto ds = tiny_world();
    auto mc = tiny_model(ds.vocab.size());
    RmBundle rm;
    rm.variant = Variant::Summary;
    rm.rm = sm::RewardModel::make(mc, sm::HeadKind::Scalar, false, 7);
    AdamConfig ac;
    ac.lr = 3e-3;
    Adam opt(rm.rm.params.all(), ac);

    auto train = ds.split("train");
    train.resize(16);
    RolloutBatch b;
    for (const auto* rec : train) {
        Trajectory tr;
        tr.rec = rec;
        tr.z = {rec->user.topic, mw::EOS};  // ideal summary
        b.trajs.push_back(std::move(tr));
    }

    b.tag = 3;
    CHECK_THROWS_AS((void)rm_step(rm, b, 4, ds.vocab, opt), ConfigError);

    // frozen optimizer leaves the model untouched
    {
        AdamConfig zc;
        zc.lr = 0.0;
        Adam zopt(rm.rm.params.all(), zc);
        std::vector<float> before = rm.rm.params.items[0]->value.data;
        b.tag = 0;
        (void)rm_step(rm, b, 0, ds.vocab, zopt);
        CHECK(rm.rm.params.items[0]->value.data == before);
    }

    double last = 0.0;
    for (int i = 0; i < 200; ++i) {
        b.tag = i;
        last = rm_step(rm, b, i, ds.vocab, opt);
    }
    CHECK(last < std::log(2.0));
}

TEST_CASE("joint training runs deterministically and records curves") {
    auto ds = tiny_world();
    JointConfig cfg;
    cfg.model = tiny_model(ds.vocab.size());
    cfg.epochs = 1;
    cfg.rollout_batch = 16;
    cfg.probe_every = 3;
    cfg.seed = 11;
    auto train = ds.split("train");
    auto probe = ds.split("test-seen");

    auto r1 = joint_train(cfg, ds, train, probe);
    auto r2 = joint_train(cfg, ds, train, probe);
    REQUIRE(r1.curves.size() == 6);  // 96 records / batch 16
    CHECK_FALSE(r1.diverged);
    for (size_t i = 0; i < r1.curves.size(); ++i) {
        CHECK(r1.curves[i].mean_reward == r2.curves[i].mean_reward);
        CHECK(r1.curves[i].rm_loss == r2.curves[i].rm_loss);
        CHECK(std::isfinite(r1.curves[i].mean_reward));
        CHECK(r1.curves[i].mean_reward < 0.0);
    }
    CHECK(r1.curves[0].probe_accuracy >= 0.0);
    CHECK(r1.curves[1].probe_accuracy == -1.0);

    // frozen-summarizer mode leaves the policy at its reference
    JointConfig frozen = cfg;
    frozen.train_actor = false;
    auto rf = joint_train(frozen, ds, train, probe);
    auto fresh = sm::Policy::make(cfg.model, Rng::mix(cfg.seed, 0xB1));
    CHECK(rf.policy.params.items[0]->value.data == fresh.params.items[0]->value.data);
    for (const auto& st : rf.curves) CHECK(st.clip_frac == 0.0);
}
