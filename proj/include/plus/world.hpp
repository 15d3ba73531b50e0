#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "plus/tensor.hpp"

namespace plus::mw {

// fixed special token ids
enum Special : int { PAD = 0, BOS = 1, EOS = 2, SEP = 3, CHOSEN = 4, REJECTED = 5, SUM = 6, HINT = 7 };

struct WorldConfig {
    enum class Mode { Topic, Attribute };
    Mode mode = Mode::Topic;

    // topic mode: preferred-topic pools. OOD topics are in the vocabulary from
    // the start but never appear in training data.
    std::vector<std::string> topics;      // in-distribution
    std::vector<std::string> topics_ood;  // reserved for the OOD split

    // attribute mode
    int num_attributes = 0;
    std::vector<std::string> attr_names;
    bool hint = false;  // append HINT + attribute names to each context

    int num_fillers = 16;
    int num_questions = 8;
    int min_context = 2;
    int max_context = 4;
    double noise_rate = 0.0;

    int n_train = 2000;
    int n_test_seen = 200;
    int n_test_ood = 200;
    int users_train = 500;
    int users_test_seen = 100;
    int users_test_ood = 100;

    std::uint64_t seed = 1;

    static WorldConfig pets_default();
    static WorldConfig ufp_default(int k);

    std::string canonical_string() const;
    std::string digest() const;
};

struct Vocabulary {
    std::vector<std::string> names;
    std::vector<int> topic_indist, topic_ood;
    std::vector<int> attr_hi, attr_lo, attr_name;  // indexed by attribute k
    std::vector<int> fillers, prompts, questions;

    int size() const { return static_cast<int>(names.size()); }
    // preference-target tokens (topics and attribute values); these are the
    // tokens a reward model must treat as interchangeable identifiers
    std::vector<int> entity_tokens() const;
    int id(const std::string& name) const;
    const std::string& name(int id) const;
    std::string digest() const;
};

Vocabulary build_vocab(const WorldConfig& cfg);

struct UserSpec {
    int user_id = 0;
    WorldConfig::Mode mode = WorldConfig::Mode::Topic;
    int topic = -1;                // preferred topic token id (topic mode)
    std::vector<float> weights;    // priority weights over K attributes
    bool ood = false;
};

struct Annotation {
    int topic = -1;             // topic token id
    std::vector<int> attrs;     // realization in {0,1}^K (1 = hi)
};

struct Segment {
    std::vector<int> tokens;  // BOS prompt SEP response EOS
    Annotation ann;
};

struct PreferencePair {
    Segment chosen;
    Segment rejected;
};

struct UserContext {
    std::vector<PreferencePair> pairs;
    bool hint = false;
};

struct DatasetRecord {
    int user_id = 0;
    std::string split;
    UserContext context;
    PreferencePair eval;
    UserSpec user;
};

struct Dataset {
    WorldConfig config;
    Vocabulary vocab;
    std::vector<DatasetRecord> records;

    std::vector<const DatasetRecord*> split(const std::string& name) const;
};

UserSpec sample_user(const WorldConfig& cfg, const Vocabulary& vocab, bool ood, int user_id, Rng& rng);

Segment render_segment(const Vocabulary& vocab, const Annotation& what, Rng& rng);

double oracle_reward(const UserSpec& user, const Segment& s);

// true iff some one-hot priority prefers A and another prefers B
bool filter_controversial(const std::vector<int>& real_a, const std::vector<int>& real_b);

PreferencePair sample_pair(const UserSpec& user, const Vocabulary& vocab, const WorldConfig& cfg, Rng& rng,
                           double noise_rate);

Dataset make_dataset(const WorldConfig& cfg);

// rendered token stream of a context: per pair CHOSEN <seg> REJECTED <seg>,
// optionally HINT plus the attribute names (never the true priority)
std::vector<int> render_context_tokens(const UserContext& ctx, const Vocabulary& vocab);

std::string detokenize(const Vocabulary& vocab, std::span<const int> tokens);

// file io: <dir>/train.jsonl, test_seen.jsonl, test_ood.jsonl, manifest.json
void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace plus::mw
