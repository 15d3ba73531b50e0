#pragma once

#include <string>
#include <vector>

#include "plus/tape.hpp"

namespace plus::ck {

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Binary checkpoint: text header with a config digest, a run of named tensor
// blocks (shape line, then raw little-endian float32), and a trailing sha256
// line over everything before it. Loading verifies the hash and, when a
// digest is supplied, the header digest.
void save_checkpoint(const std::string& path, const std::string& config_digest,
                     const std::vector<NamedTensor>& tensors);

std::vector<NamedTensor> load_checkpoint(const std::string& path, const std::string& expect_digest = "");

// convenience bridges for whole parameter sets; extra entries (optimizer
// moments etc.) can be appended before saving
std::vector<NamedTensor> snapshot(const ParamSet& ps);
void restore(ParamSet& ps, const std::vector<NamedTensor>& tensors);

}  // namespace plus::ck
