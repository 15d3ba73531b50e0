#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plus/ppo.hpp"
#include "plus/rm_train.hpp"
#include "plus/world.hpp"

namespace plus::bench {

// which response of a pair a summary-conditioned model prefers; choice is
// 1-based and ties go to the first candidate (reported via `tie`)
struct PredictResult {
    int choice = 1;
    bool tie = false;
    std::vector<int> z;
};

PredictResult predict_preference(const sm::Policy& pi, const rl::RmBundle& rm, const mw::DatasetRecord& rec,
                                 const mw::Vocabulary& vocab, const std::vector<int>& y1,
                                 const std::vector<int>& y2);

// n candidate responses spanning distinct annotations (topics or attribute
// realizations), freshly rendered; n beyond the distinct annotations errors
std::vector<mw::Segment> make_candidates(const mw::WorldConfig& wc, const mw::Vocabulary& vocab,
                                         const mw::UserSpec& user, int n, Rng& rng);

struct PersonalizeResult {
    int conditioned = 0;    // candidate index picked with the summary prefix
    int unconditioned = 0;  // candidate index picked with no prefix
    std::vector<int> z;
};

PersonalizeResult personalize_response(const sm::Policy& pi, const rl::RmBundle& rm, const mw::DatasetRecord& rec,
                                       const mw::Vocabulary& vocab, const std::vector<mw::Segment>& candidates);

struct WinRateResult {
    double win_rate = 0.0;  // ties split evenly
    int wins = 0, ties = 0, losses = 0, n = 0;
};

WinRateResult win_rate_eval(const sm::Policy& pi, const rl::RmBundle& rm, const mw::WorldConfig& wc,
                            const std::vector<const mw::DatasetRecord*>& records, const mw::Vocabulary& vocab,
                            int n_candidates, Rng& rng);

struct BenchSpec {
    std::vector<std::string> variants = {"btl", "dpl", "vpl", "icl", "plus-untrained", "plus", "oracle"};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::vector<std::string> splits = {"test-seen", "test-ood"};
    rl::RmTrainConfig rm;      // template for the supervised variants; seed set per cell
    rl::JointConfig joint;     // template for plus / plus-untrained
};

struct ReportRow {
    std::string variant, split;
    std::uint64_t seed = 0;
    double accuracy = 0.0, tie_rate = 0.0;
    int n_pairs = 0;
};

struct SummaryRecord {
    int user_id = 0;
    std::vector<int> z;
    std::string text;
};

struct BenchResult {
    std::vector<ReportRow> rows;
    std::vector<SummaryRecord> summaries;  // greedy summaries of the last trained summarizer
};

// trains every variant x seed cell and evaluates each requested split with no
// parameter updates between splits
BenchResult run_benchmark(const BenchSpec& spec, const mw::Dataset& ds);

struct AggRow {
    std::string variant, split;
    double mean = 0.0, stddev = 0.0;
    int seeds = 0;
};

std::vector<AggRow> aggregate(const std::vector<ReportRow>& rows);

void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path, const std::string& config_digest);
std::vector<ReportRow> read_report_csv(const std::string& path);
std::string render_report_md(const std::vector<ReportRow>& rows, const std::string& config_digest);
void write_summaries_jsonl(const std::vector<SummaryRecord>& summaries, const std::string& path);

}  // namespace plus::bench
