#include "plus/model.hpp"

#include <cmath>
#include <map>

namespace plus::sm {

namespace {
constexpr double kPosStd = 0.05;
constexpr double kWStd = 0.08;
}  // namespace

void ModelConfig::validate() const {
    if (d_model % heads != 0) throw ConfigError("model: d_model must be divisible by heads");
    if (t_sum < 1) throw ConfigError("model: t_sum must be >= 1");
    if (vocab_size <= 0) throw ConfigError("model: vocab_size must be set");
    if (latent_dim < 1) throw ConfigError("model: latent_dim must be >= 1");
}

std::string ModelConfig::canonical_string() const {
    std::map<std::string, std::string> kv;
    kv["d_model"] = std::to_string(d_model);
    kv["heads"] = std::to_string(heads);
    kv["layers"] = std::to_string(layers);
    kv["ff"] = std::to_string(ff);
    kv["vocab_size"] = std::to_string(vocab_size);
    kv["max_seq"] = std::to_string(max_seq);
    kv["t_sum"] = std::to_string(t_sum);
    kv["latent_dim"] = std::to_string(latent_dim);
    std::string out;
    for (auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

TrunkParams make_trunk(ParamSet& ps, const ModelConfig& cfg, const std::string& prefix, Rng& rng) {
    cfg.validate();
    TrunkParams t;
    const int d = cfg.d_model;
    t.tok_emb = &ps.add(prefix + "tok_emb", {cfg.vocab_size, d}, rng, kEmbStd);
    t.pos_emb = &ps.add(prefix + "pos_emb", {cfg.max_seq, d}, rng, kPosStd);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = prefix + "l" + std::to_string(l) + ".";
        TrunkParams::Layer layer;
        layer.wq = &ps.add(lp + "wq", {d, d}, rng, kWStd);
        layer.wk = &ps.add(lp + "wk", {d, d}, rng, kWStd);
        layer.wv = &ps.add(lp + "wv", {d, d}, rng, kWStd);
        layer.wo = &ps.add(lp + "wo", {d, d}, rng, kWStd);
        layer.ln1_g = &ps.add_const(lp + "ln1_g", {d}, 1.0f);
        layer.ln1_b = &ps.add_const(lp + "ln1_b", {d}, 0.0f);
        layer.ln2_g = &ps.add_const(lp + "ln2_g", {d}, 1.0f);
        layer.ln2_b = &ps.add_const(lp + "ln2_b", {d}, 0.0f);
        layer.w1 = &ps.add(lp + "w1", {d, cfg.ff}, rng, kWStd);
        layer.b1 = &ps.add_const(lp + "b1", {cfg.ff}, 0.0f);
        layer.w2 = &ps.add(lp + "w2", {cfg.ff, d}, rng, kWStd);
        layer.b2 = &ps.add_const(lp + "b2", {d}, 0.0f);
        t.layers.push_back(layer);
    }
    t.lnf_g = &ps.add_const(prefix + "lnf_g", {d}, 1.0f);
    t.lnf_b = &ps.add_const(prefix + "lnf_b", {d}, 0.0f);
    return t;
}

Tape::NodeId trunk_forward(Tape& tape, const TrunkParams& p, const ModelConfig& cfg, std::span<const int> tokens,
                           Tape::NodeId inject_row) {
    const int T = static_cast<int>(tokens.size()) + (inject_row >= 0 ? 1 : 0);
    if (T == 0) throw ShapeError("trunk: empty input");
    if (T > cfg.max_seq)
        throw ShapeError("trunk: sequence length " + std::to_string(T) + " exceeds max " +
                         std::to_string(cfg.max_seq));
    const int d = cfg.d_model;
    const int hd = d / cfg.heads;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(hd));

    Tape::NodeId x = tape.embed_lookup(tape.param(*p.tok_emb), tokens);
    if (inject_row >= 0) x = tape.concat(inject_row, x, 0);
    x = tape.add(x, tape.slice(tape.param(*p.pos_emb), 0, 0, T));

    for (const auto& layer : p.layers) {
        Tape::NodeId h = tape.layernorm(x, tape.param(*layer.ln1_g), tape.param(*layer.ln1_b));
        Tape::NodeId q = tape.matmul(h, tape.param(*layer.wq));
        Tape::NodeId k = tape.matmul(h, tape.param(*layer.wk));
        Tape::NodeId v = tape.matmul(h, tape.param(*layer.wv));
        Tape::NodeId heads_out = -1;
        for (int hh = 0; hh < cfg.heads; ++hh) {
            Tape::NodeId qh = tape.slice(q, 1, hh * hd, (hh + 1) * hd);
            Tape::NodeId kh = tape.slice(k, 1, hh * hd, (hh + 1) * hd);
            Tape::NodeId vh = tape.slice(v, 1, hh * hd, (hh + 1) * hd);
            Tape::NodeId att = tape.softmax_lastdim(tape.causal_attention_scores(qh, kh, att_scale));
            Tape::NodeId oh = tape.matmul(att, vh);
            heads_out = (hh == 0) ? oh : tape.concat(heads_out, oh, 1);
        }
        x = tape.add(x, tape.matmul(heads_out, tape.param(*layer.wo)));
        Tape::NodeId h2 = tape.layernorm(x, tape.param(*layer.ln2_g), tape.param(*layer.ln2_b));
        Tape::NodeId m = tape.tanh(tape.add(tape.matmul(h2, tape.param(*layer.w1)), tape.param(*layer.b1)));
        m = tape.add(tape.matmul(m, tape.param(*layer.w2)), tape.param(*layer.b2));
        x = tape.add(x, m);
    }
    return tape.layernorm(x, tape.param(*p.lnf_g), tape.param(*p.lnf_b));
}

Tape::NodeId mean_pool(Tape& tape, Tape::NodeId hidden) {
    const int T = tape.value(hidden).rows();
    return tape.matmul(tape.constant(Tensor::full({1, T}, 1.0f / static_cast<float>(T))), hidden);
}

RewardModel RewardModel::make(const ModelConfig& cfg, HeadKind head, bool use_latent, std::uint64_t seed) {
    cfg.validate();
    RewardModel rm;
    rm.cfg = cfg;
    rm.head = head;
    rm.use_latent = use_latent;
    Rng rng(Rng::mix(seed, 0x52657761));
    rm.trunk = make_trunk(rm.params, cfg, "rm.", rng);
    const int out = head == HeadKind::Scalar ? 1 : 2;
    rm.head_w = &rm.params.add("rm.head_w", {cfg.d_model, out}, rng, kWStd);
    rm.head_b = &rm.params.add_const("rm.head_b", {out}, 0.0f);
    rm.match_gain = &rm.params.add_const("rm.match_gain", {1}, 1.0f);
    if (use_latent) rm.lat_proj = &rm.params.add("rm.lat_proj", {cfg.latent_dim, cfg.d_model}, rng, kWStd);
    return rm;
}

namespace {
std::vector<int> cat_tokens(std::span<const int> a, std::span<const int> b) {
    std::vector<int> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}
}  // namespace

Tape::NodeId RewardModel::score(Tape& tape, std::span<const int> prefix, std::span<const int> segment) const {
    if (head != HeadKind::Scalar) throw ConfigError("reward model: scalar score requested from mean-var head");
    if (!prefix.empty()) {
        // conditioned scoring is a dot product of separately encoded towers.
        // The match between a conditioning token and the same token inside the
        // segment then enters as a squared norm, which keeps its sign for
        // embeddings that never received a gradient. Subtracting the same
        // prefix with its payload blanked out cancels everything the payload
        // tokens did not cause, so the score carries no static bias.
        std::vector<int> blank(prefix.begin(), prefix.end());
        for (size_t i = 1; i + 1 < blank.size(); ++i) blank[i] = 0;  // PAD
        Tape::NodeId hp = trunk_forward(tape, trunk, cfg, prefix);
        Tape::NodeId hb = trunk_forward(tape, trunk, cfg, blank);
        Tape::NodeId hs = trunk_forward(tape, trunk, cfg, segment);
        Tape::NodeId cond = tape.sub(mean_pool(tape, hp), mean_pool(tape, hb));
        // squashed so this channel cannot drown out the identity channel on
        // tokens it never saw, where its output is essentially noise
        Tape::NodeId dot = tape.tanh(tape.mean_lastdim(tape.matmul(cond, mean_pool(tape, hs), true)));

        // token-identity channel: cosine similarity between embedding rows is
        // exactly 1 when a payload token reappears in the segment, under any
        // embedding draw. The rows enter as plain numbers (they are not
        // trained); only the channel's gain learns.
        const Tensor& E = trunk.tok_emb->value;
        const int d = cfg.d_model;
        auto row = [&](int t) { return &E.data[static_cast<size_t>(t) * static_cast<size_t>(d)]; };
        auto nrm = [&](int t) {
            double s = 0.0;
            const float* r = row(t);
            for (int c = 0; c < d; ++c) s += static_cast<double>(r[c]) * r[c];
            return std::sqrt(s);
        };
        double stat = 0.0;
        int cnt = 0;
        for (size_t i = 1; i + 1 < prefix.size(); ++i) {
            const double ni = nrm(prefix[i]);
            double best = -1.0;
            for (int tj : segment) {
                const double nj = nrm(tj);
                if (ni == 0.0 || nj == 0.0) {
                    best = std::max(best, 0.0);
                    continue;
                }
                double dp = 0.0;
                const float *ri = row(prefix[i]), *rj = row(tj);
                for (int c = 0; c < d; ++c) dp += static_cast<double>(ri[c]) * rj[c];
                best = std::max(best, dp / (ni * nj));
            }
            stat += best;
            ++cnt;
        }
        if (cnt) stat /= cnt;
        return tape.add(dot, tape.scale(tape.param(*match_gain), static_cast<float>(stat)));
    }
    Tape::NodeId h = trunk_forward(tape, trunk, cfg, segment);
    Tape::NodeId out = tape.add(tape.matmul(mean_pool(tape, h), tape.param(*head_w)), tape.param(*head_b));
    return tape.mean_lastdim(out);  // [1,1] -> [1]
}

std::pair<Tape::NodeId, Tape::NodeId> RewardModel::score_meanvar(Tape& tape, std::span<const int> prefix,
                                                                 std::span<const int> segment) const {
    if (head != HeadKind::MeanVar) throw ConfigError("reward model: mean-var score requested from scalar head");
    std::vector<int> toks = cat_tokens(prefix, segment);
    Tape::NodeId h = trunk_forward(tape, trunk, cfg, toks);
    Tape::NodeId out = tape.add(tape.matmul(mean_pool(tape, h), tape.param(*head_w)), tape.param(*head_b));
    Tape::NodeId mu = tape.mean_lastdim(tape.slice(out, 1, 0, 1));
    Tape::NodeId var = tape.exp(tape.mean_lastdim(tape.slice(out, 1, 1, 2)));
    return {mu, var};
}

Tape::NodeId RewardModel::score_with_latent(Tape& tape, Tape::NodeId latent, std::span<const int> segment) const {
    if (!use_latent) throw ConfigError("reward model: latent conditioning not enabled");
    Tape::NodeId pseudo = tape.matmul(latent, tape.param(*lat_proj));
    Tape::NodeId h = trunk_forward(tape, trunk, cfg, segment, pseudo);
    Tape::NodeId out = tape.add(tape.matmul(mean_pool(tape, h), tape.param(*head_w)), tape.param(*head_b));
    return tape.mean_lastdim(out);
}

ContextEncoder ContextEncoder::make(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ContextEncoder e;
    e.cfg = cfg;
    Rng rng(Rng::mix(seed, 0x456e636f));
    e.trunk = make_trunk(e.params, cfg, "enc.", rng);
    e.proj = &e.params.add("enc.proj", {cfg.d_model, cfg.latent_dim}, rng, kWStd);
    return e;
}

Tape::NodeId ContextEncoder::embed(Tape& tape, std::span<const int> context) const {
    Tape::NodeId h = trunk_forward(tape, trunk, cfg, context);
    return tape.matmul(mean_pool(tape, h), tape.param(*proj));
}

Policy Policy::make(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Policy p;
    p.cfg = cfg;
    Rng rng(Rng::mix(seed, 0x506f6c69));
    p.trunk = make_trunk(p.params, cfg, "pi.", rng);
    return p;
}

Tape::NodeId Policy::logits(Tape& tape, std::span<const int> tokens) const {
    Tape::NodeId h = trunk_forward(tape, trunk, cfg, tokens);
    // tied output head
    return tape.matmul(h, tape.param(*trunk.tok_emb), true);
}

SampleResult Policy::sample_summary(std::span<const int> context, double temperature, Rng& rng) const {
    if (temperature < 0.0) throw ConfigError("sample_summary: temperature must be >= 0");
    SampleResult res;
    std::vector<int> toks(context.begin(), context.end());
    for (int step = 0; step < cfg.t_sum; ++step) {
        Tape tape;
        Tape::NodeId lg = logits(tape, toks);
        const Tensor& L = tape.value(lg);
        const int V = L.cols();
        const float* row = &L.data[static_cast<size_t>(L.rows() - 1) * V];
        int pick = 0;
        // log-softmax of the (possibly tempered) distribution
        std::vector<double> lp(static_cast<size_t>(V));
        const double invt = temperature > 0.0 ? 1.0 / temperature : 1.0;
        double mx = -1e300;
        for (int j = 0; j < V; ++j) {
            lp[static_cast<size_t>(j)] = static_cast<double>(row[j]) * invt;
            mx = std::max(mx, lp[static_cast<size_t>(j)]);
        }
        double zsum = 0.0;
        for (int j = 0; j < V; ++j) zsum += std::exp(lp[static_cast<size_t>(j)] - mx);
        const double lz = std::log(zsum) + mx;
        if (temperature == 0.0) {
            for (int j = 1; j < V; ++j)
                if (row[j] > row[pick]) pick = j;
        } else {
            const double u = rng.uniform();
            double c = 0.0;
            pick = V - 1;
            for (int j = 0; j < V; ++j) {
                c += std::exp(lp[static_cast<size_t>(j)] - lz);
                if (u < c) {
                    pick = j;
                    break;
                }
            }
        }
        res.z.push_back(pick);
        res.logp.push_back(static_cast<float>(lp[static_cast<size_t>(pick)] - lz));
        toks.push_back(pick);
    }
    return res;
}

Tape::NodeId Policy::z_logprobs(Tape& tape, std::span<const int> context, std::span<const int> z) const {
    if (z.empty()) throw ShapeError("z_logprobs: empty summary");
    std::vector<int> toks = cat_tokens(context, z);
    Tape::NodeId lg = logits(tape, toks);
    const int c = static_cast<int>(context.size());
    Tape::NodeId rows = tape.slice(lg, 0, c - 1, c - 1 + static_cast<int>(z.size()));
    return tape.gather_logprob(rows, z);
}

Tape::NodeId z_kl(Tape& tape, const Policy& pi, const Policy& pi_ref, std::span<const int> context,
                  std::span<const int> z) {
    if (z.empty()) throw ShapeError("z_kl: empty summary");
    std::vector<int> toks = cat_tokens(context, z);
    const int c = static_cast<int>(context.size());
    const int n = static_cast<int>(z.size());
    Tape::NodeId lp = tape.slice(pi.logits(tape, toks), 0, c - 1, c - 1 + n);
    Tape::NodeId lq = tape.slice(pi_ref.logits(tape, toks), 0, c - 1, c - 1 + n);
    // reference side is frozen; detach it by re-inserting as a constant
    Tape::NodeId lq_const = tape.constant(tape.value(lq));
    return tape.kl_rows(lp, lq_const);
}

Critic Critic::make(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Critic c;
    c.cfg = cfg;
    Rng rng(Rng::mix(seed, 0x43726974));
    c.trunk = make_trunk(c.params, cfg, "vf.", rng);
    c.vw = &c.params.add("vf.head_w", {cfg.d_model, 1}, rng, kWStd);
    c.vb = &c.params.add_const("vf.head_b", {1}, 0.0f);
    return c;
}

Tape::NodeId Critic::values(Tape& tape, std::span<const int> context, std::span<const int> z) const {
    if (z.empty()) throw ShapeError("critic: empty summary");
    std::vector<int> toks = cat_tokens(context, z);
    Tape::NodeId h = trunk_forward(tape, trunk, cfg, toks);
    const int c = static_cast<int>(context.size());
    Tape::NodeId rows = tape.slice(h, 0, c - 1, c - 1 + static_cast<int>(z.size()));
    Tape::NodeId v = tape.add(tape.matmul(rows, tape.param(*vw)), tape.param(*vb));
    return tape.mean_lastdim(v);  // [Tz,1] -> [Tz]
}

void copy_params(const ParamSet& src, ParamSet& dst) {
    if (src.items.size() != dst.items.size()) throw ConfigError("copy_params: structure mismatch");
    for (size_t i = 0; i < src.items.size(); ++i) {
        if (src.items[i]->name != dst.items[i]->name || !src.items[i]->value.same_shape(dst.items[i]->value))
            throw ConfigError("copy_params: parameter mismatch at " + src.items[i]->name);
        dst.items[i]->value.data = src.items[i]->value.data;
    }
}

}  // namespace plus::sm
