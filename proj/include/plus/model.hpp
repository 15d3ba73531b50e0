#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plus/tape.hpp"

namespace plus::sm {

// init scale of token embeddings; non-learned embedding rows are drawn at the
// same scale so they are indistinguishable from freshly initialized ones
inline constexpr double kEmbStd = 0.1;

struct ModelConfig {
    int d_model = 64;
    int heads = 4;
    int layers = 2;
    int ff = 128;
    int vocab_size = 0;
    int max_seq = 256;
    int t_sum = 8;       // summary length cap
    int latent_dim = 16; // context-embedding size for the latent-conditioned variant

    void validate() const;
    std::string canonical_string() const;
};

// Pre-LN causal transformer trunk with tanh MLP. The LM head is tied to the
// token embedding so copying tokens generalizes to embeddings never updated
// during training.
struct TrunkParams {
    Param* tok_emb = nullptr;
    Param* pos_emb = nullptr;
    struct Layer {
        Param *wq, *wk, *wv, *wo;
        Param *ln1_g, *ln1_b, *ln2_g, *ln2_b;
        Param *w1, *b1, *w2, *b2;
    };
    std::vector<Layer> layers;
    Param *lnf_g = nullptr, *lnf_b = nullptr;
};

TrunkParams make_trunk(ParamSet& ps, const ModelConfig& cfg, const std::string& prefix, Rng& rng);

// hidden states [T, d]; inject_row (when >= 0) is a [1, d] pseudo-token
// prepended before the token embeddings
Tape::NodeId trunk_forward(Tape& tape, const TrunkParams& p, const ModelConfig& cfg, std::span<const int> tokens,
                           Tape::NodeId inject_row = -1);

// mean-pooled hidden state [1, d]
Tape::NodeId mean_pool(Tape& tape, Tape::NodeId hidden);

enum class HeadKind { Scalar, MeanVar };

struct RewardModel {
    ModelConfig cfg;
    HeadKind head = HeadKind::Scalar;
    bool use_latent = false;
    ParamSet params;
    TrunkParams trunk;
    Param* head_w = nullptr;
    Param* head_b = nullptr;
    Param* match_gain = nullptr;  // [1], weight of the token-identity channel
    Param* lat_proj = nullptr;  // [latent, d], latent-conditioned variant only

    static RewardModel make(const ModelConfig& cfg, HeadKind head, bool use_latent, std::uint64_t seed);

    // scalar reward node [1]. With an empty prefix the pooled segment goes
    // through the linear head; with a prefix the score is the dot product of
    // the pooled prefix and segment representations (two towers, shared
    // trunk), so conditioning works through token similarity
    Tape::NodeId score(Tape& tape, std::span<const int> prefix, std::span<const int> segment) const;
    // (mu, var) nodes for the mean-variance head
    std::pair<Tape::NodeId, Tape::NodeId> score_meanvar(Tape& tape, std::span<const int> prefix,
                                                        std::span<const int> segment) const;
    // latent-conditioned scoring: latent is a [1, latent_dim] node
    Tape::NodeId score_with_latent(Tape& tape, Tape::NodeId latent, std::span<const int> segment) const;
};

// deterministic context encoder for the latent-conditioned baseline
struct ContextEncoder {
    ModelConfig cfg;
    ParamSet params;
    TrunkParams trunk;
    Param* proj = nullptr;  // [d, latent]

    static ContextEncoder make(const ModelConfig& cfg, std::uint64_t seed);
    Tape::NodeId embed(Tape& tape, std::span<const int> context) const;  // [1, latent_dim]
};

struct SampleResult {
    std::vector<int> z;
    std::vector<float> logp;  // per emitted token
};

// autoregressive summarizer policy (causal LM with tied output head)
struct Policy {
    ModelConfig cfg;
    ParamSet params;
    TrunkParams trunk;

    static Policy make(const ModelConfig& cfg, std::uint64_t seed);

    // next-token logits for every position, [T, V]
    Tape::NodeId logits(Tape& tape, std::span<const int> tokens) const;

    // sample exactly t_sum tokens; temperature 0 is greedy
    SampleResult sample_summary(std::span<const int> context, double temperature, Rng& rng) const;

    // teacher-forced log-probs of z's tokens given the context, node [len(z)]
    Tape::NodeId z_logprobs(Tape& tape, std::span<const int> context, std::span<const int> z) const;
};

// per-position KL between two policies' next-token distributions along z;
// gradient flows into pi only
Tape::NodeId z_kl(Tape& tape, const Policy& pi, const Policy& pi_ref, std::span<const int> context,
                  std::span<const int> z);

struct Critic {
    ModelConfig cfg;
    ParamSet params;
    TrunkParams trunk;
    Param* vw = nullptr;
    Param* vb = nullptr;

    static Critic make(const ModelConfig& cfg, std::uint64_t seed);
    // one value per generated-token position, node [len(z)]
    Tape::NodeId values(Tape& tape, std::span<const int> context, std::span<const int> z) const;
};

// copy parameter values between identically structured models
void copy_params(const ParamSet& src, ParamSet& dst);

}  // namespace plus::sm
