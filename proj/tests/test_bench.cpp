#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "plus/bench.hpp"

using namespace plus;
using namespace plus::bench;

namespace {

mw::WorldConfig tiny_config(std::uint64_t seed = 5) {
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
    return wc;
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

rl::RmBundle fresh_plus_rm(const sm::ModelConfig& mc, std::uint64_t seed) {
    rl::RmBundle rm;
    rm.variant = rl::Variant::Summary;
    rm.rm = sm::RewardModel::make(mc, sm::HeadKind::Scalar, false, seed);
    return rm;
}

}  // namespace

TEST_CASE("candidate generation spans distinct annotations and enforces bounds") {
    auto wc = tiny_config();
    auto ds = mw::make_dataset(wc);
    const auto& user = ds.split("train")[0]->user;
    Rng r(3);

    auto cands = make_candidates(wc, ds.vocab, user, 2, r);
    REQUIRE(cands.size() == 2);
    CHECK(cands[0].ann.topic != cands[1].ann.topic);
    CHECK_THROWS_AS((void)make_candidates(wc, ds.vocab, user, 1, r), ConfigError);
    CHECK_THROWS_AS((void)make_candidates(wc, ds.vocab, user, 3, r), ConfigError);

    // OOD users draw from the reserved pool
    const auto& ouser = ds.split("test-ood")[0]->user;
    auto ocands = make_candidates(wc, ds.vocab, ouser, 2, r);
    for (const auto& c : ocands)
        CHECK(std::find(ds.vocab.topic_ood.begin(), ds.vocab.topic_ood.end(), c.ann.topic) !=
              ds.vocab.topic_ood.end());

    mw::WorldConfig ac = mw::WorldConfig::ufp_default(2);
    auto avocab = mw::build_vocab(ac);
    mw::UserSpec auser;
    auser.mode = mw::WorldConfig::Mode::Attribute;
    auser.weights = {1.0f, 0.0f};
    auto acands = make_candidates(ac, avocab, auser, 4, r);
    CHECK(acands.size() == 4);
    CHECK_THROWS_AS((void)make_candidates(ac, avocab, auser, 5, r), ConfigError);
}

TEST_CASE("preference prediction: tie rule, swap symmetry, eval agreement") {
    auto ds = mw::make_dataset(tiny_config());
    auto mc = tiny_model(ds.vocab.size());
    auto pi = sm::Policy::make(mc, 3);
    auto rm = fresh_plus_rm(mc, 7);
    const auto& rec = *ds.split("test-seen")[0];

    auto same = predict_preference(pi, rm, rec, ds.vocab, rec.eval.chosen.tokens, rec.eval.chosen.tokens);
    CHECK(same.choice == 1);
    CHECK(same.tie);

    auto fwd = predict_preference(pi, rm, rec, ds.vocab, rec.eval.chosen.tokens, rec.eval.rejected.tokens);
    auto rev = predict_preference(pi, rm, rec, ds.vocab, rec.eval.rejected.tokens, rec.eval.chosen.tokens);
    CHECK_FALSE(fwd.tie);
    CHECK(fwd.choice != rev.choice);
    CHECK(fwd.z == rev.z);

    // the per-pair decision matches the batch accuracy path
    auto recs = ds.split("test-seen");
    rl::SummaryMap sums = rl::summarize_records(pi, recs, ds.vocab);
    int agree = 0;
    for (const auto* r : recs) {
        auto p = predict_preference(pi, rm, *r, ds.vocab, r->eval.chosen.tokens, r->eval.rejected.tokens);
        double margin = rl::preference_margin(rm, *r, ds.vocab, &sums);
        agree += (p.choice == 1) == (margin >= 0.0);
    }
    CHECK(agree == static_cast<int>(recs.size()));
}

TEST_CASE("personalization returns both picks; identical candidates tie to the first") {
    auto ds = mw::make_dataset(tiny_config());
    auto mc = tiny_model(ds.vocab.size());
    auto pi = sm::Policy::make(mc, 3);
    auto rm = fresh_plus_rm(mc, 7);
    const auto& rec = *ds.split("test-seen")[0];

    std::vector<mw::Segment> twins = {rec.eval.chosen, rec.eval.chosen};
    auto res = personalize_response(pi, rm, rec, ds.vocab, twins);
    CHECK(res.conditioned == 0);
    CHECK(res.unconditioned == 0);
    CHECK_THROWS_AS((void)personalize_response(pi, rm, rec, ds.vocab, {}), ConfigError);
}

TEST_CASE("win rate is exactly half when both picks coincide") {
    auto wc = tiny_config();
    auto ds = mw::make_dataset(wc);
    auto mc = tiny_model(ds.vocab.size());
    auto pi = sm::Policy::make(mc, 3);
    auto rm = fresh_plus_rm(mc, 7);
    // zero embeddings make the trunk constant in its input, so every candidate
    // scores identically under both picks and the argmax stays at index 0
    for (auto& p : rm.rm.params.items)
        if (p->name == "rm.tok_emb" || p->name == "rm.pos_emb")
            for (auto& x : p->value.data) x = 0.0f;

    auto recs = ds.split("test-seen");
    Rng r(11);
    auto wr = win_rate_eval(pi, rm, wc, recs, ds.vocab, 2, r);
    CHECK(wr.ties == wr.n);
    CHECK(wr.win_rate == 0.5);
}

TEST_CASE("aggregation reproduces hand-computed mean and deviation") {
    std::vector<ReportRow> rows = {
        {"btl", "test-seen", 1, 0.50, 0.0, 10}, {"btl", "test-seen", 2, 0.60, 0.0, 10},
        {"btl", "test-seen", 3, 0.40, 0.0, 10}, {"btl", "test-ood", 1, 0.30, 0.0, 10},
        {"oracle", "test-seen", 1, 1.00, 0.0, 10},
    };
    auto agg = aggregate(rows);
    REQUIRE(agg.size() == 3);
    CHECK(agg[0].variant == "btl");
    CHECK(agg[0].split == "test-seen");
    CHECK(std::abs(agg[0].mean - 0.5) < 1e-12);
    CHECK(std::abs(agg[0].stddev - 0.1) < 1e-9);
    CHECK(agg[1].stddev == 0.0);  // single seed
    CHECK(agg[2].mean == 1.0);
}

TEST_CASE("report csv round-trips and the markdown carries every variant") {
    namespace fs = std::filesystem;
    auto dir = fs::temp_directory_path() / "plus_bench_test";
    fs::create_directories(dir);
    auto path = (dir / "report.csv").string();
    std::vector<ReportRow> rows = {
        {"btl", "test-seen", 1, 0.512345678901234, 0.0, 32},
        {"plus", "test-seen", 1, 0.96875, 0.03125, 32},
        {"plus", "test-ood", 1, 0.8125, 0.0, 16},
    };
    write_report_csv(rows, path, "deadbeef");
    auto back = read_report_csv(path);
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].variant == rows[i].variant);
        CHECK(back[i].split == rows[i].split);
        CHECK(back[i].seed == rows[i].seed);
        CHECK(back[i].accuracy == rows[i].accuracy);
        CHECK(back[i].tie_rate == rows[i].tie_rate);
        CHECK(back[i].n_pairs == rows[i].n_pairs);
    }
    std::string md = render_report_md(rows, "deadbeef");
    CHECK(md.find("| btl |") != std::string::npos);
    CHECK(md.find("| plus |") != std::string::npos);
    CHECK(md.find("deadbeef") != std::string::npos);
    CHECK(md.find("96.9") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("benchmark grid: row shape, bounds, purity, determinism") {
    auto ds = mw::make_dataset(tiny_config());
    BenchSpec spec;
    spec.variants = {"btl", "oracle", "plus-untrained"};
    spec.seeds = {1, 2};
    spec.splits = {"test-seen", "test-ood"};
    spec.rm.model = tiny_model(ds.vocab.size());
    spec.rm.epochs = 2;
    spec.rm.batch_size = 16;
    spec.rm.lr = 3e-3;
    spec.joint.model = spec.rm.model;
    spec.joint.epochs = 1;
    spec.joint.rollout_batch = 32;
    spec.joint.probe_every = 0;

    auto r1 = run_benchmark(spec, ds);
    REQUIRE(r1.rows.size() == 3 * 2 * 2);
    for (const auto& row : r1.rows) {
        CHECK(row.accuracy >= 0.0);
        CHECK(row.accuracy <= 1.0);
        CHECK(row.n_pairs == (row.split == "test-seen" ? 32 : 16));
    }
    // grid order: variant-major, then seed, then split
    CHECK(r1.rows[0].variant == "btl");
    CHECK(r1.rows[0].seed == 1);
    CHECK(r1.rows[1].split == "test-ood");
    CHECK(r1.rows[2].seed == 2);

    auto r2 = run_benchmark(spec, ds);
    REQUIRE(r2.rows.size() == r1.rows.size());
    for (size_t i = 0; i < r1.rows.size(); ++i) CHECK(r1.rows[i].accuracy == r2.rows[i].accuracy);

    // summaries come from the plus summarizer only
    CHECK(r1.summaries.empty());
    spec.variants = {"plus"};
    spec.seeds = {1};
    auto r3 = run_benchmark(spec, ds);
    CHECK(r3.summaries.size() == 48);  // every test record across both splits
}
