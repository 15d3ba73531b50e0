#pragma once

#include <vector>

#include "plus/tape.hpp"

namespace plus {

struct AdamConfig {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    // global-norm gradient clip applied inside the step; <= 0 disables
    float clip_norm = 1.0f;
};

// Adam with bias correction over a fixed parameter list. Moments shape-match
// their parameters; the step counter increments exactly once per step.
class Adam {
public:
    // empty optimizer placeholder; step() on it is a no-op
    Adam() = default;
    Adam(std::vector<Param*> params, AdamConfig cfg);

    // Consumes and zeroes the accumulated gradients. Refuses the step (and
    // leaves t unchanged) when any gradient is non-finite.
    void step();

    long t() const { return t_; }
    AdamConfig& config() { return cfg_; }
    const std::vector<Param*>& params() const { return params_; }

    // moment access for checkpoint/resume
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }
    void set_t(long t) { t_ = t; }

private:
    std::vector<Param*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace plus
