#pragma once

#include <cstdint>
#include <vector>

#include "plus/adam.hpp"
#include "plus/model.hpp"
#include "plus/rm_train.hpp"
#include "plus/world.hpp"

namespace plus::rl {

// one sampled summary episode: every generated token is a step, the task
// reward lands on the last one
struct Trajectory {
    const mw::DatasetRecord* rec = nullptr;
    std::vector<int> ctx;  // policy input: rendered context + SUM trigger
    std::vector<int> z;
    std::vector<float> old_logp;
    std::vector<float> kl;      // per-token divergence from the frozen reference
    std::vector<float> values;  // critic estimates at rollout time
    std::vector<float> rewards;
    std::vector<float> adv, ret;
    float terminal_reward = 0.0f;
};

// a rollout batch is tagged with the iteration that produced it so the reward
// model can refuse to train on stale summaries
struct RolloutBatch {
    int tag = -1;
    std::vector<Trajectory> trajs;
    int dropped = 0;  // episodes discarded for non-finite numerics
};

struct PpoConfig {
    float clip_eps = 0.2f;
    int ppo_epochs = 4;
    int minibatch = 8;
    double gamma = 1.0;
    double lambda = 0.95;
    double kl_coef = 0.01;
    bool norm_adv = true;
    double sample_temperature = 1.0;
};

RolloutBatch rollout(const sm::Policy& pi, const sm::Policy& pi_ref, const sm::Critic& critic, const RmBundle& rm,
                     const std::vector<const mw::DatasetRecord*>& batch, const mw::Vocabulary& vocab,
                     const PpoConfig& cfg, int tag, Rng& rng);

// generalized advantage estimation plus batch-level normalization
void compute_advantages(RolloutBatch& batch, const PpoConfig& cfg);

struct PpoDiagnostics {
    double mean_ratio = 0.0;
    double clip_frac = 0.0;
    double actor_obj = 0.0;
    double critic_loss = 0.0;
};

// clipped-surrogate update of the summarizer and a squared-error update of the
// critic; a whole epoch at clip fraction 1 means the policy has run away
PpoDiagnostics ppo_update(sm::Policy& pi, sm::Critic& critic, const RolloutBatch& batch, const PpoConfig& cfg,
                          Adam& opt_actor, Adam& opt_critic, std::uint64_t shuffle_seed);

// one optimizer step of the reward model on this iteration's summaries
double rm_step(RmBundle& rm, const RolloutBatch& batch, int expected_tag, const mw::Vocabulary& vocab,
               Adam& opt_rm);

// greedy summaries for a set of records, keyed by user id
SummaryMap summarize_records(const sm::Policy& pi, const std::vector<const mw::DatasetRecord*>& records,
                             const mw::Vocabulary& vocab);

struct JointConfig {
    PpoConfig ppo;
    sm::ModelConfig model;
    int epochs = 3;
    int rollout_batch = 32;
    double actor_lr = 1e-4;
    double critic_lr = 1e-3;
    double rm_lr = 1e-3;
    std::uint64_t seed = 1;
    bool train_actor = true;  // off = frozen random summarizer baseline
    // per-epoch re-draw of the entity-token embedding rows, with the final
    // calibrate_epochs back on the shipped draw: copying the preference token
    // out of the context is then the only policy that survives the shuffling,
    // and it transfers to tokens never trained on. The reward model shuffles
    // from the start; the summarizer and critic keep their shipped rows for
    // redraw_warmup epochs first, because a policy trained under shuffling
    // from scratch never gets off the ground
    bool entity_redraw = true;
    int redraw_warmup = 8;
    int calibrate_epochs = 4;
    int probe_every = 50;
    int divergence_patience = 200;
};

struct IterStats {
    int iteration = 0;
    double mean_reward = 0.0;
    double rm_loss = 0.0;
    double mean_kl = 0.0;
    double clip_frac = 0.0;
    double probe_accuracy = -1.0;  // -1 when not probed this iteration
};

// everything joint training carries across epochs; checkpointable at epoch
// boundaries (all per-iteration randomness is re-derived from seed and epoch)
struct JointState {
    sm::Policy policy;
    sm::Policy ref;
    sm::Critic critic;
    RmBundle rm;
    Tensor pi_tok_init, vf_tok_init;  // shipped embedding draws (see entity_redraw)
    Adam opt_actor, opt_critic, opt_rm;
    std::vector<IterStats> curves;
    bool diverged = false;
    int dropped = 0;
    int iter = 0;
    int next_epoch = 0;
    double best_reward = -1e30;
    int bad_streak = 0;
};

JointState make_joint_state(const JointConfig& cfg);

// one epoch of rollout / policy update / reward-model update over the shuffled
// training records
void run_joint_epoch(const JointConfig& cfg, const mw::Dataset& ds,
                     const std::vector<const mw::DatasetRecord*>& train,
                     const std::vector<const mw::DatasetRecord*>& probe, JointState& st);

struct JointResult {
    sm::Policy policy;
    sm::Critic critic;
    RmBundle rm;
    std::vector<IterStats> curves;
    bool diverged = false;
    int dropped = 0;
};

JointResult joint_train(const JointConfig& cfg, const mw::Dataset& ds,
                        const std::vector<const mw::DatasetRecord*>& train,
                        const std::vector<const mw::DatasetRecord*>& probe);

}  // namespace plus::rl
