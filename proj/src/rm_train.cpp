#include "plus/rm_train.hpp"

#include <algorithm>
#include <cmath>

#include "plus/losses.hpp"

namespace plus::rl {

Variant variant_from_string(const std::string& s) {
    if (s == "btl") return Variant::Btl;
    if (s == "dpl") return Variant::Dpl;
    if (s == "icl") return Variant::Icl;
    if (s == "vpl") return Variant::Vpl;
    if (s == "summary") return Variant::Summary;
    if (s == "oracle") return Variant::Oracle;
    throw ConfigError("unknown reward-model variant '" + s + "'");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Btl: return "btl";
        case Variant::Dpl: return "dpl";
        case Variant::Icl: return "icl";
        case Variant::Vpl: return "vpl";
        case Variant::Summary: return "summary";
        case Variant::Oracle: return "oracle";
    }
    throw ConfigError("unknown variant");
}

namespace {

int oracle_pref_token(const mw::DatasetRecord& rec) {
    if (rec.user.mode == mw::WorldConfig::Mode::Topic) return rec.user.topic;
    int best = 0;
    for (size_t k = 1; k < rec.user.weights.size(); ++k)
        if (rec.user.weights[k] > rec.user.weights[best]) best = static_cast<int>(k);
    return best;  // index, mapped to a token by the caller
}

void require_summaries(const std::vector<const mw::DatasetRecord*>& records, const SummaryMap* summaries) {
    std::string missing;
    int count = 0;
    for (const auto* r : records) {
        if (!summaries || !summaries->count(r->user_id)) {
            if (count < 8) missing += (count ? ", " : "") + std::to_string(r->user_id);
            ++count;
        }
    }
    if (count)
        throw DataError("summary-conditioned variant: no summary for " + std::to_string(count) +
                        " user(s): " + missing);
}

}  // namespace

std::vector<int> conditioning_prefix(Variant v, const mw::DatasetRecord& rec, const mw::Vocabulary& vocab,
                                     const SummaryMap* summaries) {
    switch (v) {
        case Variant::Btl:
        case Variant::Dpl:
        case Variant::Vpl: return {};
        case Variant::Icl: {
            std::vector<int> p = mw::render_context_tokens(rec.context, vocab);
            p.push_back(mw::SEP);
            return p;
        }
        case Variant::Summary: {
            if (!summaries || !summaries->count(rec.user_id))
                throw DataError("summary-conditioned variant: no summary for user " + std::to_string(rec.user_id));
            std::vector<int> p = {mw::SUM};
            const auto& z = summaries->at(rec.user_id);
            p.insert(p.end(), z.begin(), z.end());
            p.push_back(mw::SEP);
            return p;
        }
        case Variant::Oracle: {
            int tok = rec.user.mode == mw::WorldConfig::Mode::Topic ? rec.user.topic
                                                                    : vocab.attr_hi[static_cast<size_t>(
                                                                          oracle_pref_token(rec))];
            return {mw::SUM, tok, mw::SEP};
        }
    }
    throw ConfigError("unknown variant");
}

std::vector<Param*> RmBundle::all_params() {
    std::vector<Param*> ps = rm.params.all();
    if (encoder) {
        auto es = encoder->params.all();
        ps.insert(ps.end(), es.begin(), es.end());
    }
    return ps;
}

std::vector<Param*> RmBundle::trainable_params() {
    std::vector<Param*> ps;
    for (Param* p : all_params())
        if (p != rm.trunk.tok_emb) ps.push_back(p);
    return ps;
}

void redraw_entity_rows(Tensor& tok_emb, int d_model, const mw::Vocabulary& vocab, std::uint64_t stream) {
    Rng rng(stream);
    for (int tok : vocab.entity_tokens())
        for (int c = 0; c < d_model; ++c)
            tok_emb.data[static_cast<size_t>(tok) * static_cast<size_t>(d_model) + static_cast<size_t>(c)] =
                static_cast<float>(sm::kEmbStd * rng.normal());
}

void redraw_entity_rows(sm::RewardModel& rm, const mw::Vocabulary& vocab, std::uint64_t stream) {
    redraw_entity_rows(rm.trunk.tok_emb->value, rm.cfg.d_model, vocab, stream);
}

namespace {

// loss node plus the scalar margin, for one record's target pair
std::pair<Tape::NodeId, double> record_loss(Tape& t, const RmBundle& b, const mw::DatasetRecord& rec,
                                            const mw::Vocabulary& vocab, const SummaryMap* summaries,
                                            const std::vector<int>& seg_c, const std::vector<int>& seg_r) {
    if (b.variant == Variant::Dpl) {
        auto [mc, vc] = b.rm.score_meanvar(t, {}, seg_c);
        auto [mr, vr] = b.rm.score_meanvar(t, {}, seg_r);
        double margin = (static_cast<double>(t.value(mc).data[0]) - t.value(mr).data[0]) /
                        std::sqrt(static_cast<double>(t.value(vc).data[0]) + t.value(vr).data[0]);
        return {dpl_loss(t, mc, vc, mr, vr), margin};
    }
    if (b.variant == Variant::Vpl) {
        Tape::NodeId lat = b.encoder->embed(t, mw::render_context_tokens(rec.context, vocab));
        Tape::NodeId rc = b.rm.score_with_latent(t, lat, seg_c);
        Tape::NodeId rr = b.rm.score_with_latent(t, lat, seg_r);
        double margin = static_cast<double>(t.value(rc).data[0]) - t.value(rr).data[0];
        return {btl_loss(t, rc, rr), margin};
    }
    std::vector<int> prefix = conditioning_prefix(b.variant, rec, vocab, summaries);
    Tape::NodeId rc = b.rm.score(t, prefix, seg_c);
    Tape::NodeId rr = b.rm.score(t, prefix, seg_r);
    double margin = static_cast<double>(t.value(rc).data[0]) - t.value(rr).data[0];
    return {btl_loss(t, rc, rr), margin};
}

}  // namespace

RmBundle make_rm_bundle(const RmTrainConfig& cfg) {
    cfg.model.validate();
    RmBundle b;
    b.variant = cfg.variant;
    const sm::HeadKind head = cfg.variant == Variant::Dpl ? sm::HeadKind::MeanVar : sm::HeadKind::Scalar;
    b.rm = sm::RewardModel::make(cfg.model, head, cfg.variant == Variant::Vpl, Rng::mix(cfg.seed, 0xA1));
    if (cfg.variant == Variant::Vpl) b.encoder = sm::ContextEncoder::make(cfg.model, Rng::mix(cfg.seed, 0xA2));
    b.tok_emb_init = b.rm.trunk.tok_emb->value;
    return b;
}

EpochStats run_rm_epoch(const RmTrainConfig& cfg, const mw::Dataset& ds,
                        const std::vector<const mw::DatasetRecord*>& records, const SummaryMap* summaries,
                        RmBundle& b, Adam& opt, int epoch) {
    if (records.empty()) throw DataError("run_rm_epoch: no records");
    if (cfg.batch_size < 1) throw ConfigError("run_rm_epoch: batch_size must be >= 1");
    if (cfg.variant == Variant::Summary) require_summaries(records, summaries);
    auto params = b.trainable_params();

    // augmentation schedule for the non-learned entity embeddings: a fresh
    // draw per epoch, then back to the draw the model ships with for the
    // final stretch (and for any epoch past cfg.epochs, so resumed
    // overtraining stays consistent)
    if (cfg.entity_redraw) {
        const bool augment = epoch < cfg.epochs - cfg.calibrate_epochs;
        if (augment)
            redraw_entity_rows(b.rm, ds.vocab, Rng::mix(cfg.seed, 0xE4B0 + static_cast<std::uint64_t>(epoch)));
        else
            b.rm.trunk.tok_emb->value = b.tok_emb_init;
    }

    const int n = static_cast<int>(records.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    Rng shuf(Rng::mix(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i)
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuf.uniform_int(i + 1))]);

    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
        const int bn = std::min(cfg.batch_size, n - start);
        for (int j = 0; j < bn; ++j) {
            const auto& rec = *records[static_cast<size_t>(order[static_cast<size_t>(start + j)])];
            Tape t;
            auto [loss, margin] =
                record_loss(t, b, rec, ds.vocab, summaries, rec.eval.chosen.tokens, rec.eval.rejected.tokens);
            loss_sum += t.value(loss).data[0];
            correct += margin > 0.0;
            t.backward(loss);
        }
        const float inv = 1.0f / static_cast<float>(bn);
        for (Param* p : params)
            for (auto& g : p->grad.data) g *= inv;
        opt.step();
        // the non-learned embeddings still collect gradients; discard them
        for (auto& g : b.rm.trunk.tok_emb->grad.data) g = 0.0f;
    }
    return {epoch, loss_sum / n, static_cast<double>(correct) / n};
}

RmTrainResult train_rm(const RmTrainConfig& cfg, const mw::Dataset& ds,
                       const std::vector<const mw::DatasetRecord*>& records, const SummaryMap* summaries) {
    if (records.empty()) throw DataError("train_rm: no records");
    if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("train_rm: epochs and batch_size must be >= 1");
    if (cfg.variant == Variant::Summary) require_summaries(records, summaries);

    RmTrainResult res;
    res.bundle = make_rm_bundle(cfg);
    AdamConfig acfg;
    acfg.lr = static_cast<float>(cfg.lr);
    Adam opt(res.bundle.trainable_params(), acfg);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch)
        res.epochs.push_back(run_rm_epoch(cfg, ds, records, summaries, res.bundle, opt, epoch));
    return res;
}

EvalStats eval_accuracy(const RmBundle& bundle, const std::vector<const mw::DatasetRecord*>& records,
                        const mw::Vocabulary& vocab, const SummaryMap* summaries) {
    if (records.empty()) throw DataError("eval_accuracy: no records");
    if (bundle.variant == Variant::Summary) require_summaries(records, summaries);
    EvalStats st;
    st.n = static_cast<int>(records.size());
    int ties = 0;
    double correct = 0.0;
    for (const auto* rec : records) {
        double m = preference_margin(bundle, *rec, vocab, summaries);
        if (m == 0.0) ++ties;
        // a tie earns half credit: a scorer that cannot separate the pair
        // should sit at chance, not at the ceiling
        correct += m > 0.0 ? 1.0 : (m == 0.0 ? 0.5 : 0.0);
    }
    st.accuracy = correct / st.n;
    st.tie_rate = static_cast<double>(ties) / st.n;
    return st;
}

double preference_margin(const RmBundle& bundle, const mw::DatasetRecord& rec, const mw::Vocabulary& vocab,
                         const SummaryMap* summaries) {
    return segment_margin(bundle, rec, vocab, summaries, rec.eval.chosen.tokens, rec.eval.rejected.tokens);
}

double segment_margin(const RmBundle& bundle, const mw::DatasetRecord& rec, const mw::Vocabulary& vocab,
                      const SummaryMap* summaries, const std::vector<int>& seg_a, const std::vector<int>& seg_b) {
    Tape t;
    auto [loss, margin] = record_loss(t, bundle, rec, vocab, summaries, seg_a, seg_b);
    (void)loss;
    return margin;
}

}  // namespace plus::rl
