#include "plus/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "plus/digest.hpp"

namespace plus::bench {

namespace {

std::vector<int> policy_input(const mw::DatasetRecord& rec, const mw::Vocabulary& vocab) {
    std::vector<int> ctx = mw::render_context_tokens(rec.context, vocab);
    ctx.push_back(mw::SUM);
    return ctx;
}

std::vector<int> greedy_summary(const sm::Policy& pi, const mw::DatasetRecord& rec, const mw::Vocabulary& vocab) {
    Rng unused(0);
    return pi.sample_summary(policy_input(rec, vocab), 0.0, unused).z;
}

double scalar_score(const rl::RmBundle& rm, const std::vector<int>& prefix, const std::vector<int>& seg) {
    Tape t;
    return t.value(rm.rm.score(t, prefix, seg)).data[0];
}

std::vector<int> summary_prefix(const std::vector<int>& z) {
    std::vector<int> p = {mw::SUM};
    p.insert(p.end(), z.begin(), z.end());
    p.push_back(mw::SEP);
    return p;
}

std::string params_digest(const ParamSet& ps) {
    Sha256 h;
    for (const auto& p : ps.items) {
        h.update(p->name);
        h.update(p->value.data.data(), p->value.data.size() * sizeof(float));
    }
    return h.hex();
}

int argmax_candidate(const std::vector<mw::Segment>& candidates, const std::vector<int>& prefix,
                     const rl::RmBundle& rm) {
    int best = 0;
    double best_score = scalar_score(rm, prefix, candidates[0].tokens);
    for (size_t i = 1; i < candidates.size(); ++i) {
        double s = scalar_score(rm, prefix, candidates[i].tokens);
        if (s > best_score) {
            best = static_cast<int>(i);
            best_score = s;
        }
    }
    return best;
}

}  // namespace

PredictResult predict_preference(const sm::Policy& pi, const rl::RmBundle& rm, const mw::DatasetRecord& rec,
                                 const mw::Vocabulary& vocab, const std::vector<int>& y1,
                                 const std::vector<int>& y2) {
    PredictResult res;
    res.z = greedy_summary(pi, rec, vocab);
    rl::SummaryMap sums;
    sums[rec.user_id] = res.z;
    const double margin = rl::segment_margin(rm, rec, vocab, &sums, y1, y2);
    res.tie = margin == 0.0;
    res.choice = margin >= 0.0 ? 1 : 2;
    return res;
}

std::vector<mw::Segment> make_candidates(const mw::WorldConfig& wc, const mw::Vocabulary& vocab,
                                         const mw::UserSpec& user, int n, Rng& rng) {
    if (n < 2) throw ConfigError("make_candidates: need at least 2 candidates");
    std::vector<mw::Segment> out;
    if (wc.mode == mw::WorldConfig::Mode::Topic) {
        const auto& pool = user.ood ? vocab.topic_ood : vocab.topic_indist;
        if (n > static_cast<int>(pool.size()))
            throw ConfigError("make_candidates: " + std::to_string(n) + " candidates exceed the " +
                              std::to_string(pool.size()) + " distinct topics");
        for (int i = 0; i < n; ++i)
            out.push_back(mw::render_segment(vocab, mw::Annotation{.topic = pool[static_cast<size_t>(i)]}, rng));
    } else {
        const int k = wc.num_attributes;
        const int distinct = 1 << k;
        if (n > distinct)
            throw ConfigError("make_candidates: " + std::to_string(n) + " candidates exceed the " +
                              std::to_string(distinct) + " distinct attribute realizations");
        for (int i = 0; i < n; ++i) {
            std::vector<int> attrs(static_cast<size_t>(k));
            for (int b = 0; b < k; ++b) attrs[static_cast<size_t>(b)] = (i >> b) & 1;
            out.push_back(mw::render_segment(vocab, mw::Annotation{.attrs = attrs}, rng));
        }
    }
    return out;
}

PersonalizeResult personalize_response(const sm::Policy& pi, const rl::RmBundle& rm, const mw::DatasetRecord& rec,
                                       const mw::Vocabulary& vocab, const std::vector<mw::Segment>& candidates) {
    if (candidates.empty()) throw ConfigError("personalize_response: no candidates");
    PersonalizeResult res;
    res.z = greedy_summary(pi, rec, vocab);
    res.conditioned = argmax_candidate(candidates, summary_prefix(res.z), rm);
    res.unconditioned = argmax_candidate(candidates, {}, rm);
    return res;
}

WinRateResult win_rate_eval(const sm::Policy& pi, const rl::RmBundle& rm, const mw::WorldConfig& wc,
                            const std::vector<const mw::DatasetRecord*>& records, const mw::Vocabulary& vocab,
                            int n_candidates, Rng& rng) {
    WinRateResult res;
    res.n = static_cast<int>(records.size());
    for (const auto* rec : records) {
        auto cands = make_candidates(wc, vocab, rec->user, n_candidates, rng);
        auto pick = personalize_response(pi, rm, *rec, vocab, cands);
        const double rc = mw::oracle_reward(rec->user, cands[static_cast<size_t>(pick.conditioned)]);
        const double ru = mw::oracle_reward(rec->user, cands[static_cast<size_t>(pick.unconditioned)]);
        if (rc > ru)
            ++res.wins;
        else if (rc < ru)
            ++res.losses;
        else
            ++res.ties;
    }
    res.win_rate = res.n ? (res.wins + 0.5 * res.ties) / res.n : 0.0;
    return res;
}

BenchResult run_benchmark(const BenchSpec& spec, const mw::Dataset& ds) {
    if (spec.seeds.empty()) throw ConfigError("run_benchmark: need at least one seed");
    if (spec.splits.empty()) throw ConfigError("run_benchmark: need at least one split");
    BenchResult out;
    auto train = ds.split("train");

    for (const auto& vname : spec.variants) {
        const bool is_joint = vname == "plus" || vname == "plus-untrained";
        for (std::uint64_t seed : spec.seeds) {
            if (is_joint) {
                rl::JointConfig jc = spec.joint;
                jc.seed = seed;
                jc.train_actor = vname == "plus";
                auto probe = ds.split(spec.splits.front());
                auto res = rl::joint_train(jc, ds, train, probe);

                const std::string d0 = params_digest(res.rm.rm.params) + params_digest(res.policy.params);
                for (const auto& split : spec.splits) {
                    auto recs = ds.split(split);
                    if (recs.empty()) throw DataError("run_benchmark: empty split " + split);
                    rl::SummaryMap sums = rl::summarize_records(res.policy, recs, ds.vocab);
                    auto st = rl::eval_accuracy(res.rm, recs, ds.vocab, &sums);
                    out.rows.push_back({vname, split, seed, st.accuracy, st.tie_rate, st.n});
                }
                if (params_digest(res.rm.rm.params) + params_digest(res.policy.params) != d0)
                    throw DigestError("run_benchmark: parameters changed during evaluation");

                if (vname == "plus" && seed == spec.seeds.back()) {
                    out.summaries.clear();
                    for (const auto& split : spec.splits)
                        for (const auto* rec : ds.split(split)) {
                            auto z = greedy_summary(res.policy, *rec, ds.vocab);
                            out.summaries.push_back({rec->user_id, z, mw::detokenize(ds.vocab, z)});
                        }
                }
            } else {
                rl::RmTrainConfig rc = spec.rm;
                rc.variant = rl::variant_from_string(vname);
                rc.seed = seed;
                auto res = rl::train_rm(rc, ds, train, nullptr);
                const std::string d0 = params_digest(res.bundle.rm.params);
                for (const auto& split : spec.splits) {
                    auto recs = ds.split(split);
                    if (recs.empty()) throw DataError("run_benchmark: empty split " + split);
                    auto st = rl::eval_accuracy(res.bundle, recs, ds.vocab, nullptr);
                    out.rows.push_back({vname, split, seed, st.accuracy, st.tie_rate, st.n});
                }
                if (params_digest(res.bundle.rm.params) != d0)
                    throw DigestError("run_benchmark: parameters changed during evaluation");
            }
        }
    }
    return out;
}

std::vector<AggRow> aggregate(const std::vector<ReportRow>& rows) {
    std::vector<AggRow> out;
    for (const auto& r : rows) {
        AggRow* slot = nullptr;
        for (auto& a : out)
            if (a.variant == r.variant && a.split == r.split) slot = &a;
        if (!slot) {
            out.push_back({r.variant, r.split, 0.0, 0.0, 0});
            slot = &out.back();
        }
        slot->mean += r.accuracy;
        ++slot->seeds;
    }
    for (auto& a : out) a.mean /= a.seeds;
    for (const auto& r : rows)
        for (auto& a : out)
            if (a.variant == r.variant && a.split == r.split)
                a.stddev += (r.accuracy - a.mean) * (r.accuracy - a.mean);
    for (auto& a : out) a.stddev = a.seeds > 1 ? std::sqrt(a.stddev / (a.seeds - 1)) : 0.0;
    return out;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path, const std::string& config_digest) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_report_csv: cannot open " + path);
    f << "# config_digest=" << config_digest << "\n";
    f << "variant,split,seed,accuracy,tie_rate,n_pairs\n";
    char buf[64];
    for (const auto& r : rows) {
        f << r.variant << ',' << r.split << ',' << r.seed << ',';
        std::snprintf(buf, sizeof buf, "%.17g", r.accuracy);
        f << buf << ',';
        std::snprintf(buf, sizeof buf, "%.17g", r.tie_rate);
        f << buf << ',' << r.n_pairs << "\n";
    }
}

std::vector<ReportRow> read_report_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("read_report_csv: cannot open " + path);
    std::vector<ReportRow> rows;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("variant,", 0) == 0) continue;
        std::istringstream ss(line);
        ReportRow r;
        std::string field;
        auto next = [&]() {
            if (!std::getline(ss, field, ',')) throw DataError("read_report_csv: malformed row: " + line);
            return field;
        };
        r.variant = next();
        r.split = next();
        r.seed = std::stoull(next());
        r.accuracy = std::stod(next());
        r.tie_rate = std::stod(next());
        r.n_pairs = std::stoi(next());
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string render_report_md(const std::vector<ReportRow>& rows, const std::string& config_digest) {
    // splits and variants in first-appearance order
    std::vector<std::string> splits, variants;
    for (const auto& r : rows) {
        if (std::find(splits.begin(), splits.end(), r.split) == splits.end()) splits.push_back(r.split);
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
    }
    auto agg = aggregate(rows);
    std::string md = "<!-- config_digest=" + config_digest + " -->\n\n";
    md += "# Preference prediction accuracy (%)\n\n| variant |";
    for (const auto& s : splits) md += " " + s + " |";
    md += "\n|---|";
    for (size_t i = 0; i < splits.size(); ++i) md += "---|";
    md += "\n";
    char buf[64];
    for (const auto& v : variants) {
        md += "| " + v + " |";
        for (const auto& s : splits) {
            const AggRow* found = nullptr;
            for (const auto& a : agg)
                if (a.variant == v && a.split == s) found = &a;
            if (found) {
                std::snprintf(buf, sizeof buf, " %.1f ± %.1f |", 100.0 * found->mean, 100.0 * found->stddev);
                md += buf;
            } else {
                md += " — |";
            }
        }
        md += "\n";
    }
    return md;
}

void write_summaries_jsonl(const std::vector<SummaryRecord>& summaries, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("write_summaries_jsonl: cannot open " + path);
    for (const auto& s : summaries) {
        f << "{\"user_id\":" << s.user_id << ",\"z\":[";
        for (size_t i = 0; i < s.z.size(); ++i) f << (i ? "," : "") << s.z[i];
        f << "],\"text\":\"" << s.text << "\"}\n";
    }
}

}  // namespace plus::bench
