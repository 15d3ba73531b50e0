#include "plus/adam.hpp"

#include <cmath>

namespace plus {

Adam::Adam(std::vector<Param*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Param* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape));
        v_.push_back(Tensor::zeros(p->value.shape));
    }
}

void Adam::step() {
    double sq = 0.0;
    for (Param* p : params_) {
        for (float g : p->grad.data) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in " + p->name + ", step refused");
            sq += static_cast<double>(g) * g;
        }
    }
    double scale = 1.0;
    if (cfg_.clip_norm > 0.0f) {
        const double norm = std::sqrt(sq);
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    t_ += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Param* p = params_[i];
        for (size_t j = 0; j < p->value.data.size(); ++j) {
            const double g = p->grad.data[j] * scale;
            const double m = cfg_.beta1 * m_[i].data[j] + (1.0 - cfg_.beta1) * g;
            const double v = cfg_.beta2 * v_[i].data[j] + (1.0 - cfg_.beta2) * g * g;
            m_[i].data[j] = static_cast<float>(m);
            v_[i].data[j] = static_cast<float>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            p->value.data[j] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
        p->zero_grad();
    }
}

}  // namespace plus
