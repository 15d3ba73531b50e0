// end-to-end acceptance gate: prints one pass/fail line per criterion and
// exits nonzero if any of them fail. Budget-heavy pieces (joint training)
// run once and feed several criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "plus/bench.hpp"
#include "plus/checkpoint.hpp"
#include "plus/digest.hpp"
#include "plus/losses.hpp"
#include "plus/ppo.hpp"

using namespace plus;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const char* name, bool ok, const std::string& detail) {
    std::printf("criterion %2d %-24s %s  %s\n", idx, name, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median3(double a, double b, double c) {
    std::vector<double> v{a, b, c};
    std::sort(v.begin(), v.end());
    return v[1];
}

std::string fmt3(double a, double b, double c, const char* f = "%.3f") {
    char buf[96];
    char ff[48];
    std::snprintf(ff, sizeof ff, "%s/%s/%s", f, f, f);
    std::snprintf(buf, sizeof buf, ff, a, b, c);
    return buf;
}

sm::ModelConfig lab_model(int vocab) {
    sm::ModelConfig mc;
    mc.d_model = 32;
    mc.heads = 4;
    mc.layers = 1;
    mc.ff = 64;
    mc.vocab_size = vocab;
    mc.max_seq = 256;
    mc.t_sum = 8;
    mc.validate();
    return mc;
}

// ---------------------------------------------------------------- criterion 1

// central-difference check of one scalar loss against the tape's gradients;
// returns the worst relative error over a few coordinates of every parameter
double fd_check(const std::vector<Param*>& params, const std::function<double()>& value,
                const std::function<Tape::NodeId(Tape&)>& build, Rng& pick) {
    for (Param* p : params) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
    {
        Tape t;
        t.backward(build(t));
    }
    double worst = 0.0;
    for (Param* p : params) {
        for (int probe = 0; probe < 2; ++probe) {
            size_t i = static_cast<size_t>(pick.uniform_int(static_cast<int>(p->value.data.size())));
            const float keep = p->value.data[i];
            // two central differences combined to cancel the h^2 truncation
            // term; single-h differences bottom out near 5e-3 on float graphs
            auto central = [&](double h) {
                p->value.data[i] = keep + static_cast<float>(h);
                const double up = value();
                p->value.data[i] = keep - static_cast<float>(h);
                const double dn = value();
                p->value.data[i] = keep;
                return (up - dn) / (2 * h);
            };
            const double h = 2e-2;
            const double fd = (4.0 * central(h / 2) - central(h)) / 3.0;
            const double an = p->grad.data[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1.0});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    }
    return worst;
}

void criterion_gradients() {
    auto t0 = Clock::now();
    sm::ModelConfig mc;
    mc.d_model = 8;
    mc.heads = 2;
    mc.layers = 1;
    mc.ff = 16;
    mc.vocab_size = 16;
    mc.max_seq = 32;
    mc.t_sum = 4;
    mc.latent_dim = 4;
    mc.validate();

    double worst = 0.0;
    int instances = 0;
    Rng pick(2024);
    for (int i = 0; i < 100; ++i) {
        Rng gen(Rng::mix(77, static_cast<std::uint64_t>(i)));
        auto rand_toks = [&](int lo, int hi) {
            std::vector<int> v(static_cast<size_t>(lo + gen.uniform_int(hi - lo + 1)));
            for (auto& x : v) x = gen.uniform_int(mc.vocab_size);
            return v;
        };
        std::vector<int> seg = rand_toks(3, 8);
        std::vector<int> ctx = rand_toks(3, 8);
        std::vector<int> pre = rand_toks(3, 5);
        const std::uint64_t seed = 500 + static_cast<std::uint64_t>(i);
        switch (i % 6) {
            case 0: {  // pooled-head scoring
                auto rm = sm::RewardModel::make(mc, sm::HeadKind::Scalar, false, seed);
                auto build = [&](Tape& t) { return rm.score(t, {}, seg); };
                auto value = [&]() { Tape t; return static_cast<double>(t.value(build(t)).data[0]); };
                worst = std::max(worst, fd_check(rm.params.all(), value, build, pick));
                break;
            }
            case 1: {  // prefix-conditioned scoring (token table is non-learned)
                auto rm = sm::RewardModel::make(mc, sm::HeadKind::Scalar, false, seed);
                std::vector<Param*> ps;
                for (Param* p : rm.params.all())
                    if (p != rm.trunk.tok_emb) ps.push_back(p);
                auto build = [&](Tape& t) { return rm.score(t, pre, seg); };
                auto value = [&]() { Tape t; return static_cast<double>(t.value(build(t)).data[0]); };
                worst = std::max(worst, fd_check(ps, value, build, pick));
                break;
            }
            case 2: {  // mean-variance head through the distributional loss
                auto rm = sm::RewardModel::make(mc, sm::HeadKind::MeanVar, false, seed);
                auto build = [&](Tape& t) {
                    auto [mc1, vc1] = rm.score_meanvar(t, {}, seg);
                    auto [mr1, vr1] = rm.score_meanvar(t, {}, ctx);
                    return rl::dpl_loss(t, mc1, vc1, mr1, vr1);
                };
                auto value = [&]() { Tape t; return static_cast<double>(t.value(build(t)).data[0]); };
                worst = std::max(worst, fd_check(rm.params.all(), value, build, pick));
                break;
            }
            case 3: {  // latent-conditioned scoring through the context encoder
                auto rm = sm::RewardModel::make(mc, sm::HeadKind::Scalar, true, seed);
                auto enc = sm::ContextEncoder::make(mc, seed + 1);
                std::vector<Param*> ps = rm.params.all();
                for (Param* p : enc.params.all()) ps.push_back(p);
                auto build = [&](Tape& t) { return rm.score_with_latent(t, enc.embed(t, ctx), seg); };
                auto value = [&]() { Tape t; return static_cast<double>(t.value(build(t)).data[0]); };
                worst = std::max(worst, fd_check(ps, value, build, pick));
                break;
            }
            case 4: {  // summarizer log-probabilities
                auto pi = sm::Policy::make(mc, seed);
                std::vector<int> z = rand_toks(2, mc.t_sum);
                auto build = [&](Tape& t) { return t.mean_all(pi.z_logprobs(t, ctx, z)); };
                auto value = [&]() { Tape t; return static_cast<double>(t.value(build(t)).data[0]); };
                worst = std::max(worst, fd_check(pi.params.all(), value, build, pick));
                break;
            }
            default: {  // critic values
                auto cr = sm::Critic::make(mc, seed);
                std::vector<int> z = rand_toks(2, mc.t_sum);
                auto build = [&](Tape& t) { return t.mean_all(cr.values(t, ctx, z)); };
                auto value = [&]() { Tape t; return static_cast<double>(t.value(build(t)).data[0]); };
                worst = std::max(worst, fd_check(cr.params.all(), value, build, pick));
                break;
            }
        }
        ++instances;
    }
    const double secs = elapsed(t0);
    char buf[128];
    std::snprintf(buf, sizeof buf, "max rel err %.2e over %d instances, %.1fs", worst, instances, secs);
    report(1, "gradient soundness", worst < 1e-3 && instances == 100 && secs < 60.0, buf);
}

// ---------------------------------------------------------------- criterion 2

void criterion_losses() {
    constexpr double kLn2 = 0.6931471805599453;
    Tape t;
    auto zero = t.constant(Tensor::scalar(0.0f));
    const double at_zero = t.value(rl::btl_loss(t, zero, zero)).data[0];

    double worst = 0.0;
    Rng r(42);
    for (int i = 0; i < 100000; ++i) {
        const double a = 10.0 * (r.uniform() - 0.5);
        const double b = 10.0 * (r.uniform() - 0.5);
        worst = std::max(worst, std::abs(rl::btl_loss_expform(a, b) - rl::btl_loss_sigmoidform(a, b)));
    }

    Tape t2;
    auto mu = t2.constant(Tensor::scalar(0.7f));
    auto var = t2.constant(Tensor::scalar(1.3f));
    const double dpl_sym = t2.value(rl::dpl_loss(t2, mu, var, mu, var)).data[0];
    const double dpl_ref = rl::dpl_loss_ref(0.7, 1.3, 0.7, 1.3);
    const double btl_ref = rl::btl_loss_sigmoidform(0.0, 0.0);

    // the exact ln2 identities hold in the double-precision reference forms;
    // the float32 graph values must agree with them to float precision
    const bool ok = std::abs(btl_ref - kLn2) < 1e-9 && std::abs(dpl_ref - kLn2) < 1e-9 && worst < 1e-12 &&
                    std::abs(at_zero - btl_ref) < 1e-6 && std::abs(dpl_sym - dpl_ref) < 1e-6;
    char buf[192];
    std::snprintf(buf, sizeof buf,
                  "btl(0,0)-ln2=%.1e (graph %.1e), form gap=%.1e over 1e5 pairs, dpl sym-ln2=%.1e (graph %.1e)",
                  btl_ref - kLn2, at_zero - btl_ref, worst, dpl_ref - kLn2, dpl_sym - dpl_ref);
    report(2, "closed-form losses", ok, buf);
}

// --------------------------------------------------- supervised RM criteria

struct RmOutcome {
    double seen[3], ood[3];
    double secs;
};

RmOutcome train_rm_three_seeds(const mw::Dataset& ds, rl::Variant variant, int epochs, const rl::SummaryMap* sums) {
    RmOutcome out{};
    auto t0 = Clock::now();
    auto train = ds.split("train");
    for (int s = 0; s < 3; ++s) {
        rl::RmTrainConfig rc;
        rc.model = lab_model(ds.vocab.size());
        rc.variant = variant;
        rc.epochs = epochs;
        rc.batch_size = 16;
        rc.lr = 3e-3;
        rc.seed = static_cast<std::uint64_t>(s + 1);
        auto res = rl::train_rm(rc, ds, train, sums);
        out.seen[s] = rl::eval_accuracy(res.bundle, ds.split("test-seen"), ds.vocab, sums).accuracy;
        out.ood[s] = rl::eval_accuracy(res.bundle, ds.split("test-ood"), ds.vocab, sums).accuracy;
    }
    out.secs = elapsed(t0);
    return out;
}

// ------------------------------------------------------------ joint training

struct JointOutcome {
    double seen = 0.0, ood = 0.0;
    double r_first = 0.0, r_last = 0.0;
    double secs = 0.0;
    bool diverged = false;
    rl::JointResult res;
    rl::SummaryMap sums;  // greedy summaries over both test splits
};

JointOutcome run_joint(const mw::Dataset& ds, std::uint64_t seed, bool train_actor) {
    rl::JointConfig jc;
    jc.model = lab_model(ds.vocab.size());
    jc.epochs = 24;
    jc.rollout_batch = 32;
    jc.actor_lr = 3e-4;
    jc.critic_lr = 1e-3;
    jc.rm_lr = 1e-3;
    jc.ppo.kl_coef = 0.001;
    jc.seed = seed;
    jc.train_actor = train_actor;
    jc.probe_every = 0;

    JointOutcome out;
    auto t0 = Clock::now();
    out.res = rl::joint_train(jc, ds, ds.split("train"), {});
    out.secs = elapsed(t0);
    out.diverged = out.res.diverged;

    const size_t n = out.res.curves.size();
    const size_t k = std::max<size_t>(1, n / 10);
    for (size_t i = 0; i < k; ++i) out.r_first += out.res.curves[i].mean_reward;
    for (size_t i = n - k; i < n; ++i) out.r_last += out.res.curves[i].mean_reward;
    out.r_first /= static_cast<double>(k);
    out.r_last /= static_cast<double>(k);

    out.sums = rl::summarize_records(out.res.policy, ds.split("test-seen"), ds.vocab);
    auto more = rl::summarize_records(out.res.policy, ds.split("test-ood"), ds.vocab);
    for (auto& [uid, z] : more) out.sums[uid] = z;
    out.seen = rl::eval_accuracy(out.res.rm, ds.split("test-seen"), ds.vocab, &out.sums).accuracy;
    out.ood = rl::eval_accuracy(out.res.rm, ds.split("test-ood"), ds.vocab, &out.sums).accuracy;
    return out;
}

// ------------------------------------------------------------- criterion 10

void criterion_reproducibility(const mw::WorldConfig& wc) {
    auto t0 = Clock::now();
    const fs::path base = fs::temp_directory_path() / "plus_acceptance_repro";
    fs::remove_all(base);
    fs::create_directories(base / "a");
    fs::create_directories(base / "b");

    bool ok = true;
    std::string detail;

    // dataset artifacts
    for (const char* sub : {"a", "b"}) {
        auto ds = mw::make_dataset(wc);
        mw::write_dataset(ds, (base / sub).string());
    }
    for (const char* f : {"train.jsonl", "test_seen.jsonl", "test_ood.jsonl", "manifest.json"}) {
        const std::string ha = sha256_file((base / "a" / f).string());
        const std::string hb = sha256_file((base / "b" / f).string());
        if (ha != hb) {
            ok = false;
            detail = std::string("dataset file ") + f + " differs";
        }
    }

    // trained-model artifacts
    auto ds = mw::make_dataset(wc);
    for (const char* sub : {"a", "b"}) {
        rl::RmTrainConfig rc;
        rc.model = lab_model(ds.vocab.size());
        rc.variant = rl::Variant::Oracle;
        rc.epochs = 2;
        rc.batch_size = 16;
        rc.lr = 3e-3;
        rc.seed = 1;
        auto res = rl::train_rm(rc, ds, ds.split("train"), nullptr);
        ck::save_checkpoint((base / sub / "rm.ckpt").string(), "acceptancedigest",
                            ck::snapshot(res.bundle.rm.params));
    }
    if (sha256_file((base / "a" / "rm.ckpt").string()) != sha256_file((base / "b" / "rm.ckpt").string())) {
        ok = false;
        detail = "rm checkpoint differs between identical runs";
    }
    if (ok) detail = "dataset + checkpoint bytes identical across reruns";
    char buf[192];
    std::snprintf(buf, sizeof buf, "%s, %.1fs", detail.c_str(), elapsed(t0));
    report(10, "reproducibility", ok, buf);
    fs::remove_all(base);
}

}  // namespace

int main() {
    std::printf("acceptance suite\n");
    auto wall0 = Clock::now();

    criterion_gradients();
    criterion_losses();

    mw::WorldConfig wc = mw::WorldConfig::pets_default();
    wc.seed = 1;
    mw::Dataset ds = mw::make_dataset(wc);

    {  // 3: unconditioned model stays near chance on an evenly split world
        auto o = train_rm_three_seeds(ds, rl::Variant::Btl, 10, nullptr);
        bool ok = o.secs < 300.0;
        for (double a : o.seen) ok = ok && a >= 0.40 && a <= 0.60;
        report(3, "null-personalization", ok,
               "test-seen " + fmt3(o.seen[0], o.seen[1], o.seen[2]) + ", " + std::to_string(static_cast<int>(o.secs)) + "s");
    }
    {  // 4: true-preference-token conditioning is exact on both splits
        auto o = train_rm_three_seeds(ds, rl::Variant::Oracle, 28, nullptr);
        bool ok = o.secs < 300.0;
        for (int s = 0; s < 3; ++s) ok = ok && o.seen[s] == 1.0 && o.ood[s] == 1.0;
        report(4, "oracle ceiling", ok,
               "seen " + fmt3(o.seen[0], o.seen[1], o.seen[2]) + " ood " + fmt3(o.ood[0], o.ood[1], o.ood[2]) +
                   ", " + std::to_string(static_cast<int>(o.secs)) + "s");
    }
    rl::SummaryMap gt;
    for (const auto& r : ds.records) gt[r.user_id] = {r.user.topic};
    {  // 5: the summary-conditioning pathway carries ground-truth tokens
        auto o = train_rm_three_seeds(ds, rl::Variant::Summary, 28, &gt);
        bool ok = o.secs < 600.0;
        for (double a : o.seen) ok = ok && a >= 0.95;
        report(5, "conditioning pathway", ok,
               "test-seen " + fmt3(o.seen[0], o.seen[1], o.seen[2]) + ", " + std::to_string(static_cast<int>(o.secs)) + "s");
    }

    // joint runs feed criteria 6, 7, 8, 9
    JointOutcome plus[3], frozen[3];
    for (int s = 0; s < 3; ++s) plus[s] = run_joint(ds, static_cast<std::uint64_t>(s + 1), true);
    for (int s = 0; s < 3; ++s) frozen[s] = run_joint(ds, static_cast<std::uint64_t>(s + 1), false);

    {  // 6: joint training reaches high seen accuracy and climbs in reward
        int hi = 0;
        bool reward_up = true, in_budget = true;
        for (int s = 0; s < 3; ++s) {
            hi += plus[s].seen >= 0.90;
            reward_up = reward_up && plus[s].r_last > plus[s].r_first;
            in_budget = in_budget && plus[s].secs <= 1800.0;
        }
        char buf[256];
        std::snprintf(buf, sizeof buf, "seen %s, R %0.3f->%0.3f / %0.3f->%0.3f / %0.3f->%0.3f, max %ds/seed",
                      fmt3(plus[0].seen, plus[1].seen, plus[2].seen).c_str(), plus[0].r_first, plus[0].r_last,
                      plus[1].r_first, plus[1].r_last, plus[2].r_first, plus[2].r_last,
                      static_cast<int>(std::max({plus[0].secs, plus[1].secs, plus[2].secs})));
        report(6, "joint learning", hi >= 2 && reward_up && in_budget, buf);
    }
    {  // 7: learned summaries beat the frozen random summarizer
        const double d = median3(plus[0].seen - frozen[0].seen, plus[1].seen - frozen[1].seen,
                                 plus[2].seen - frozen[2].seen);
        report(7, "beats frozen summarizer", d >= 0.05,
               "median gap " + fmt3(plus[0].seen - frozen[0].seen, plus[1].seen - frozen[1].seen,
                                    plus[2].seen - frozen[2].seen) +
                   " -> " + std::to_string(d));
    }
    {  // 8: holds up on users whose topics never appeared in training
        auto icl = train_rm_three_seeds(ds, rl::Variant::Icl, 28, nullptr);
        const double pm = median3(plus[0].ood, plus[1].ood, plus[2].ood);
        const double im = median3(icl.ood[0], icl.ood[1], icl.ood[2]);
        char buf[192];
        std::snprintf(buf, sizeof buf, "plus ood %s (median %.3f) vs icl ood %s (median %.3f)",
                      fmt3(plus[0].ood, plus[1].ood, plus[2].ood).c_str(), pm,
                      fmt3(icl.ood[0], icl.ood[1], icl.ood[2]).c_str(), im);
        report(8, "ood robustness", pm >= 0.75 && pm > im, buf);
    }
    {  // 9: summary-conditioned picks win the oracle-judged head-to-head
        Rng r(913);
        auto wr = bench::win_rate_eval(plus[0].res.policy, plus[0].res.rm, wc, ds.split("test-seen"), ds.vocab, 2, r);
        char buf[128];
        std::snprintf(buf, sizeof buf, "win rate %.3f (%d wins / %d ties / %d losses over %d records)",
                      wr.win_rate, wr.wins, wr.ties, wr.losses, wr.n);
        report(9, "best-of-n win rate", wr.win_rate >= 0.70 && wr.n == 200, buf);
    }

    criterion_reproducibility(wc);

    std::printf("acceptance total %.0fs, %d failure(s)\n", elapsed(wall0), g_failures);
    return g_failures == 0 ? 0 : 1;
}
