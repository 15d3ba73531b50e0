#pragma once

#include <string>

#include "plus/bench.hpp"
#include "plus/ppo.hpp"
#include "plus/rm_train.hpp"
#include "plus/world.hpp"

namespace plus::io {

// one archivable run description: world + model + both training regimes +
// benchmark plan; sections and keys unknown to the schema are rejected
struct RunConfig {
    mw::WorldConfig world = mw::WorldConfig::pets_default();
    sm::ModelConfig model;
    rl::RmTrainConfig rm;
    rl::JointConfig joint;
    bench::BenchSpec bench;
    int win_rate_candidates = 2;
    int win_rate_records = 200;

    // key=value dump in a fixed order; its hash stamps every artifact
    std::string canonical_string() const;
    std::string digest() const;

    // propagate shared sub-configs (model into trainers, seeds, vocab size)
    void finalize(int vocab_size);
};

RunConfig parse_config_text(const std::string& text, const std::string& source);
RunConfig parse_config_file(const std::string& path);

}  // namespace plus::io
