// plus_lab: generate preference microworlds, train summarizer/reward models,
// and benchmark every conditioning variant.
//
// Exit codes: 0 ok, 2 bad config/usage, 3 training divergence, 4 digest
// mismatch, 1 anything else.
#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>

#include "plus/bench.hpp"
#include "plus/checkpoint.hpp"
#include "plus/config.hpp"
#include "plus/digest.hpp"
#include "plus/ppo.hpp"
#include "plus/rm_train.hpp"
#include "plus/world.hpp"

namespace fs = std::filesystem;
using namespace plus;

namespace {

std::string fmtd(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed) {
    if (flag) return *flag;
    if (const char* env = std::getenv("PLUS_LAB_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("PLUS_LAB_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    return config_seed;
}

mw::Dataset load_matching_dataset(const io::RunConfig& cfg, const std::string& dir) {
    mw::Dataset ds = mw::load_dataset(dir);
    if (ds.config.digest() != cfg.world.digest())
        throw DigestError("dataset at " + dir + " was generated from a different world config (" +
                          ds.config.digest() + " vs " + cfg.world.digest() + ")");
    return ds;
}

// ---- optimizer state <-> named tensors ----

void append_adam(std::vector<ck::NamedTensor>& out, const std::string& tag, Adam& opt) {
    const auto& ps = opt.params();
    for (size_t i = 0; i < ps.size(); ++i) {
        out.push_back({"adam." + tag + ".m." + ps[i]->name, opt.m()[i]});
        out.push_back({"adam." + tag + ".v." + ps[i]->name, opt.v()[i]});
    }
}

const Tensor* find_tensor(const std::vector<ck::NamedTensor>& ts, const std::string& name) {
    for (const auto& nt : ts)
        if (nt.name == name) return &nt.value;
    return nullptr;
}

void restore_adam(const std::vector<ck::NamedTensor>& ts, const std::string& tag, Adam& opt, long t) {
    const auto& ps = opt.params();
    for (size_t i = 0; i < ps.size(); ++i) {
        const Tensor* m = find_tensor(ts, "adam." + tag + ".m." + ps[i]->name);
        const Tensor* v = find_tensor(ts, "adam." + tag + ".v." + ps[i]->name);
        if (!m || !v) throw DataError("train state is missing optimizer moments for " + ps[i]->name);
        opt.m()[i] = *m;
        opt.v()[i] = *v;
    }
    opt.set_t(t);
}

// ---- curves ----

void write_joint_curves(const std::string& path, const std::vector<rl::IterStats>& curves) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + path);
    f << "iteration,mean_reward,rm_loss,mean_kl,clip_frac,probe_accuracy\n";
    for (const auto& c : curves)
        f << c.iteration << ',' << fmtd(c.mean_reward) << ',' << fmtd(c.rm_loss) << ',' << fmtd(c.mean_kl) << ','
          << fmtd(c.clip_frac) << ',' << fmtd(c.probe_accuracy) << "\n";
}

void write_rm_curves(const std::string& path, const std::string& variant, std::uint64_t seed,
                     const std::vector<rl::EpochStats>& curves) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open " + path);
    f << "variant,seed,epoch,loss,accuracy\n";
    for (const auto& c : curves)
        f << variant << ',' << seed << ',' << c.epoch << ',' << fmtd(c.loss) << ',' << fmtd(c.accuracy) << "\n";
}

// ---- commands ----

int cmd_gen_data(const io::RunConfig& cfg, const std::string& out) {
    fs::create_directories(out);
    mw::Dataset ds = mw::make_dataset(cfg.world);
    mw::write_dataset(ds, out);
    std::printf("wrote %zu records (%d train / %d test-seen / %d test-ood) to %s\n", ds.records.size(),
                cfg.world.n_train, cfg.world.n_test_seen, cfg.world.n_test_ood, out.c_str());
    return 0;
}

// joint (plus / plus-untrained) training with epoch-boundary resume
int train_joint(io::RunConfig cfg, const mw::Dataset& ds, bool train_actor, const std::string& out) {
    cfg.joint.train_actor = train_actor;
    const std::string digest = cfg.digest();
    const std::string state_path = out + "/train_state.ckpt";
    auto train = ds.split("train");
    auto probe = ds.split("test-seen");

    rl::JointState st = rl::make_joint_state(cfg.joint);
    if (fs::exists(state_path)) {
        auto ts = ck::load_checkpoint(state_path, digest);
        ck::restore(st.policy.params, ts);
        ck::restore(st.critic.params, ts);
        ck::restore(st.rm.rm.params, ts);
        const Tensor* meta = find_tensor(ts, "meta.progress");
        if (!meta || meta->numel() != 9) throw DataError("train state has no progress record");
        st.next_epoch = static_cast<int>(meta->data[0]);
        st.iter = static_cast<int>(meta->data[1]);
        st.dropped = static_cast<int>(meta->data[2]);
        st.best_reward = meta->data[3];
        st.bad_streak = static_cast<int>(meta->data[4]);
        st.diverged = meta->data[5] != 0.0f;
        restore_adam(ts, "actor", st.opt_actor, static_cast<long>(meta->data[6]));
        restore_adam(ts, "critic", st.opt_critic, static_cast<long>(meta->data[7]));
        restore_adam(ts, "rm", st.opt_rm, static_cast<long>(meta->data[8]));
        std::printf("resuming from %s at epoch %d\n", state_path.c_str(), st.next_epoch);
        // curves before the resume point are not persisted in the state file;
        // the final curves.csv covers the epochs run by this invocation
    }

    while (st.next_epoch < cfg.joint.epochs && !st.diverged) {
        rl::run_joint_epoch(cfg.joint, ds, train, probe, st);
        std::vector<ck::NamedTensor> ts = ck::snapshot(st.policy.params);
        for (auto& nt : ck::snapshot(st.critic.params)) ts.push_back(std::move(nt));
        for (auto& nt : ck::snapshot(st.rm.rm.params)) ts.push_back(std::move(nt));
        append_adam(ts, "actor", st.opt_actor);
        append_adam(ts, "critic", st.opt_critic);
        append_adam(ts, "rm", st.opt_rm);
        Tensor meta({9}, {static_cast<float>(st.next_epoch), static_cast<float>(st.iter),
                          static_cast<float>(st.dropped), static_cast<float>(st.best_reward),
                          static_cast<float>(st.bad_streak), st.diverged ? 1.0f : 0.0f,
                          static_cast<float>(st.opt_actor.t()), static_cast<float>(st.opt_critic.t()),
                          static_cast<float>(st.opt_rm.t())});
        ts.push_back({"meta.progress", meta});
        ck::save_checkpoint(state_path, digest, ts);
        write_joint_curves(out + "/curves.csv", st.curves);
        const auto& last = st.curves.empty() ? rl::IterStats{} : st.curves.back();
        std::printf("epoch %d done: iter=%d mean_reward=%.4f rm_loss=%.4f\n", st.next_epoch - 1, st.iter,
                    last.mean_reward, last.rm_loss);
    }

    ck::save_checkpoint(out + "/pi.ckpt", digest, ck::snapshot(st.policy.params));
    ck::save_checkpoint(out + "/rm.ckpt", digest, ck::snapshot(st.rm.rm.params));
    ck::save_checkpoint(out + "/critic.ckpt", digest, ck::snapshot(st.critic.params));
    if (st.dropped > 0) std::fprintf(stderr, "warning: %d rollouts dropped for non-finite numerics\n", st.dropped);
    if (st.diverged) throw DivergenceError("joint training halted by the reward-collapse watchdog");
    return 0;
}

int train_rm_variant(const io::RunConfig& cfg, const mw::Dataset& ds, rl::Variant variant, const std::string& out) {
    rl::RmTrainConfig rc = cfg.rm;
    rc.variant = variant;
    const std::string digest = cfg.digest();
    const std::string state_path = out + "/train_state.ckpt";
    auto train = ds.split("train");

    rl::RmBundle bundle = rl::make_rm_bundle(rc);
    AdamConfig ac;
    ac.lr = static_cast<float>(rc.lr);
    Adam opt(bundle.trainable_params(), ac);
    int next_epoch = 0;
    std::vector<rl::EpochStats> curves;

    if (fs::exists(state_path)) {
        auto ts = ck::load_checkpoint(state_path, digest);
        ck::restore(bundle.rm.params, ts);
        if (bundle.encoder) ck::restore(bundle.encoder->params, ts);
        const Tensor* meta = find_tensor(ts, "meta.progress");
        if (!meta || meta->numel() != 2) throw DataError("train state has no progress record");
        next_epoch = static_cast<int>(meta->data[0]);
        restore_adam(ts, "rm", opt, static_cast<long>(meta->data[1]));
        std::printf("resuming from %s at epoch %d\n", state_path.c_str(), next_epoch);
    }

    for (; next_epoch < rc.epochs; ++next_epoch) {
        curves.push_back(rl::run_rm_epoch(rc, ds, train, nullptr, bundle, opt, next_epoch));
        std::vector<ck::NamedTensor> ts = ck::snapshot(bundle.rm.params);
        if (bundle.encoder)
            for (auto& nt : ck::snapshot(bundle.encoder->params)) ts.push_back(std::move(nt));
        append_adam(ts, "rm", opt);
        ts.push_back({"meta.progress", Tensor({2}, {static_cast<float>(next_epoch + 1), static_cast<float>(opt.t())})});
        ck::save_checkpoint(state_path, digest, ts);
        write_rm_curves(out + "/curves.csv", rl::variant_name(variant), rc.seed, curves);
        std::printf("epoch %d: loss=%.4f accuracy=%.3f\n", next_epoch, curves.back().loss, curves.back().accuracy);
    }

    std::vector<ck::NamedTensor> final_ts = ck::snapshot(bundle.rm.params);
    if (bundle.encoder)
        for (auto& nt : ck::snapshot(bundle.encoder->params)) final_ts.push_back(std::move(nt));
    ck::save_checkpoint(out + "/rm.ckpt", digest, final_ts);
    return 0;
}

int cmd_train(io::RunConfig cfg, const std::string& variant, const std::string& data, const std::string& out,
              const std::optional<std::uint64_t>& seed_flag) {
    mw::Dataset ds = load_matching_dataset(cfg, data);
    cfg.finalize(ds.vocab.size());
    const std::uint64_t seed = resolve_seed(seed_flag, cfg.world.seed);
    cfg.rm.seed = seed;
    cfg.joint.seed = seed;
    fs::create_directories(out);
    if (variant == "plus") return train_joint(cfg, ds, true, out);
    if (variant == "plus-untrained") return train_joint(cfg, ds, false, out);
    return train_rm_variant(cfg, ds, rl::variant_from_string(variant), out);
}

int cmd_bench(io::RunConfig cfg, const std::string& data, const std::string& out,
              const std::vector<std::string>& variants, const std::vector<std::string>& splits,
              const std::vector<std::uint64_t>& seeds) {
    mw::Dataset ds = load_matching_dataset(cfg, data);
    cfg.finalize(ds.vocab.size());
    if (!variants.empty()) cfg.bench.variants = variants;
    if (!splits.empty()) cfg.bench.splits = splits;
    if (!seeds.empty()) cfg.bench.seeds = seeds;
    fs::create_directories(out);

    bench::BenchResult res = bench::run_benchmark(cfg.bench, ds);
    const std::string digest = cfg.digest();
    bench::write_report_csv(res.rows, out + "/report.csv", digest);
    std::string md = bench::render_report_md(res.rows, digest);
    {
        std::ofstream f(out + "/report.md", std::ios::trunc);
        if (!f) throw DataError("cannot open " + out + "/report.md");
        f << md;
    }
    bench::write_summaries_jsonl(res.summaries, out + "/summaries.jsonl");
    std::fputs(md.c_str(), stdout);
    return 0;
}

int cmd_summarize(io::RunConfig cfg, const std::string& data, const std::string& policy_path,
                  const std::string& out) {
    mw::Dataset ds = load_matching_dataset(cfg, data);
    cfg.finalize(ds.vocab.size());
    sm::Policy pi = sm::Policy::make(cfg.model, 0);
    ck::restore(pi.params, ck::load_checkpoint(policy_path, cfg.digest()));

    std::vector<bench::SummaryRecord> recs;
    rl::SummaryMap seen;
    int aligned = 0;
    Rng unused(0);
    for (const auto& r : ds.records) {
        if (seen.count(r.user_id)) continue;
        std::vector<int> ctx = mw::render_context_tokens(r.context, ds.vocab);
        ctx.push_back(mw::SUM);
        std::vector<int> z = pi.sample_summary(ctx, 0.0, unused).z;
        seen[r.user_id] = z;
        if (cfg.world.mode == mw::WorldConfig::Mode::Topic)
            aligned += std::find(z.begin(), z.end(), r.user.topic) != z.end();
        recs.push_back({r.user_id, z, mw::detokenize(ds.vocab, z)});
    }
    bench::write_summaries_jsonl(recs, out);
    if (!recs.empty() && cfg.world.mode == mw::WorldConfig::Mode::Topic)
        std::printf("summaries: %zu users, topic containment %.3f\n", recs.size(),
                    static_cast<double>(aligned) / recs.size());
    else
        std::printf("summaries: %zu users\n", recs.size());
    return 0;
}

int cmd_report(const std::string& in, const std::string& out) {
    auto rows = bench::read_report_csv(in);
    // recover the digest stamp from the CSV header comment
    std::string digest = "unknown";
    {
        std::ifstream f(in);
        std::string first;
        if (std::getline(f, first) && first.rfind("# config_digest=", 0) == 0)
            digest = first.substr(std::string("# config_digest=").size());
    }
    std::string md = bench::render_report_md(rows, digest);
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw DataError("cannot open " + out);
    f << md;
    std::fputs(md.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"preference-summarization laboratory"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, variant, report_in;
    std::string policy_path;
    std::optional<std::uint64_t> seed_flag;
    int threads = 1;
    std::vector<std::string> bench_variants, bench_splits;
    std::vector<std::uint64_t> bench_seeds;

    app.add_option("--threads", threads, "worker threads (1 = fully deterministic)")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic preference dataset");
    gen->add_option("--config", config_path, "run config file")->required();
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--seed", seed_flag, "world seed override");

    auto* train = app.add_subcommand("train", "train one variant");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--variant", variant, "btl|dpl|icl|vpl|oracle|plus|plus-untrained")->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_path, "artifact directory")->required();
    train->add_option("--seed", seed_flag, "training seed override");

    auto* bench_cmd = app.add_subcommand("bench", "train + evaluate the variant grid");
    bench_cmd->add_option("--config", config_path, "run config file")->required();
    bench_cmd->add_option("--data", data_dir, "dataset directory")->required();
    bench_cmd->add_option("--out", out_path, "report directory")->required();
    bench_cmd->add_option("--variants", bench_variants, "variant subset")->delimiter(',');
    bench_cmd->add_option("--splits", bench_splits, "split subset")->delimiter(',');
    bench_cmd->add_option("--seeds", bench_seeds, "seed list")->delimiter(',');

    auto* summ = app.add_subcommand("summarize", "greedy summaries for every user");
    summ->add_option("--config", config_path, "run config file")->required();
    summ->add_option("--data", data_dir, "dataset directory")->required();
    summ->add_option("--policy", policy_path, "summarizer checkpoint")->required();
    summ->add_option("--out", out_path, "output jsonl path")->required();

    auto* rep = app.add_subcommand("report", "rebuild the markdown table from a report csv");
    rep->add_option("--in", report_in, "report.csv path")->required();
    rep->add_option("--out", out_path, "report.md path")->required();

    try {
        app.parse(argc, argv);
        if (rep->parsed()) return cmd_report(report_in, out_path);

        io::RunConfig cfg = io::parse_config_file(config_path);
        if (gen->parsed()) {
            cfg.world.seed = resolve_seed(seed_flag, cfg.world.seed);
            return cmd_gen_data(cfg, out_path);
        }
        if (train->parsed()) return cmd_train(cfg, variant, data_dir, out_path, seed_flag);
        if (bench_cmd->parsed()) return cmd_bench(cfg, data_dir, out_path, bench_variants, bench_splits, bench_seeds);
        if (summ->parsed()) return cmd_summarize(cfg, data_dir, policy_path, out_path);
        return 2;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const DigestError& e) {
        std::fprintf(stderr, "digest mismatch: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
