#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "plus/adam.hpp"
#include "plus/model.hpp"
#include "plus/world.hpp"

namespace plus::rl {

// how the reward model sees (or doesn't see) the user
enum class Variant { Btl, Dpl, Icl, Vpl, Summary, Oracle };

Variant variant_from_string(const std::string& s);
std::string variant_name(Variant v);

// user_id -> summary tokens, produced by a summarizer policy
using SummaryMap = std::unordered_map<int, std::vector<int>>;

// conditioning tokens prepended to each scored segment; empty for the
// unconditioned variants, latent conditioning is handled separately
std::vector<int> conditioning_prefix(Variant v, const mw::DatasetRecord& rec, const mw::Vocabulary& vocab,
                                     const SummaryMap* summaries);

struct RmTrainConfig {
    Variant variant = Variant::Btl;
    int epochs = 6;
    int batch_size = 16;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    sm::ModelConfig model;

    // entity-token embeddings are never learned; during all but the last
    // calibrate_epochs they are freshly drawn each epoch so the trunk cannot
    // memorize particular directions, then fixed to the shipped draw
    bool entity_redraw = true;
    int calibrate_epochs = 4;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct RmBundle {
    Variant variant = Variant::Btl;
    sm::RewardModel rm;
    std::optional<sm::ContextEncoder> encoder;  // latent-conditioned variant only
    Tensor tok_emb_init;  // embedding draw the model ships with; restored after augmentation

    std::vector<Param*> all_params();
    // everything except the reward trunk's token embeddings, which stay at
    // their random draw so scoring extrapolates to tokens unseen in training
    std::vector<Param*> trainable_params();
};

// overwrite entity-token embedding rows with a fresh normal draw
void redraw_entity_rows(Tensor& tok_emb, int d_model, const mw::Vocabulary& vocab, std::uint64_t stream);
void redraw_entity_rows(sm::RewardModel& rm, const mw::Vocabulary& vocab, std::uint64_t stream);

struct RmTrainResult {
    RmBundle bundle;
    std::vector<EpochStats> epochs;
};

// fresh models + optimizer for a training run
RmBundle make_rm_bundle(const RmTrainConfig& cfg);

// one pass over the records in a per-epoch shuffled order; callable from a
// resumed state as long as `epoch` continues where the checkpoint left off
EpochStats run_rm_epoch(const RmTrainConfig& cfg, const mw::Dataset& ds,
                        const std::vector<const mw::DatasetRecord*>& records, const SummaryMap* summaries,
                        RmBundle& bundle, Adam& opt, int epoch);

RmTrainResult train_rm(const RmTrainConfig& cfg, const mw::Dataset& ds,
                       const std::vector<const mw::DatasetRecord*>& records, const SummaryMap* summaries);

struct EvalStats {
    double accuracy = 0.0;
    double tie_rate = 0.0;
    int n = 0;
};

// score each record's held-out pair; chosen must win strictly, exact ties are
// counted correct but reported
EvalStats eval_accuracy(const RmBundle& bundle, const std::vector<const mw::DatasetRecord*>& records,
                        const mw::Vocabulary& vocab, const SummaryMap* summaries);

// signed preference margin r(chosen) - r(rejected) for one record
double preference_margin(const RmBundle& bundle, const mw::DatasetRecord& rec, const mw::Vocabulary& vocab,
                         const SummaryMap* summaries);

// margin for an arbitrary pair of segments under a record's conditioning
double segment_margin(const RmBundle& bundle, const mw::DatasetRecord& rec, const mw::Vocabulary& vocab,
                      const SummaryMap* summaries, const std::vector<int>& seg_a, const std::vector<int>& seg_b);

}  // namespace plus::rl
