#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "plus/tensor.hpp"

namespace plus {

// A named trainable parameter. Gradients accumulate here across backward passes
// until the optimizer consumes them.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor::zeros(value.shape);
    }
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0f); }
};

// Owning container so parameter addresses stay stable.
struct ParamSet {
    std::vector<std::unique_ptr<Param>> items;

    Param& add(const std::string& name, std::vector<int> shape, Rng& rng, double stddev);
    Param& add_const(const std::string& name, std::vector<int> shape, float v);
    std::vector<Param*> all() const;
    void zero_grads();
    Param* find(const std::string& name) const;
};

// Reverse-mode gradient tape over a fixed op vocabulary. Node ids are
// topologically ordered by construction; backward walks them in strict
// reverse order exactly once. Accumulations inside matmul, softmax,
// layernorm and reductions run in 64-bit and round to float32.
class Tape {
public:
    using NodeId = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeId constant(Tensor t);
    NodeId param(Param& p);

    NodeId matmul(NodeId a, NodeId b, bool transpose_b = false);
    // b may match a, be a row vector broadcast over a's rows, or be a scalar
    NodeId add(NodeId a, NodeId b);
    // elementwise; b may be a scalar
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, float c) { return mul(a, constant(Tensor::scalar(c))); }
    NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0f)); }

    NodeId sigmoid(NodeId a);
    NodeId tanh(NodeId a);
    NodeId log(NodeId a);
    NodeId exp(NodeId a);
    NodeId sqrt(NodeId a);
    NodeId logsigmoid(NodeId a);
    NodeId normcdf(NodeId a);

    NodeId softmax_lastdim(NodeId a);
    NodeId mean_lastdim(NodeId a);
    NodeId mean_all(NodeId a);
    NodeId layernorm(NodeId a, NodeId gain, NodeId bias);

    NodeId embed_lookup(NodeId table, std::span<const int> ids);
    NodeId concat(NodeId a, NodeId b, int dim);
    NodeId slice(NodeId a, int dim, int start, int end);

    // masked scaled dot-product scores: s[i][j] = scale * q_i . k_j for j <= i,
    // masked positions set to a large negative constant (no gradient).
    NodeId causal_attention_scores(NodeId q, NodeId k, float scl);

    // per-row log-softmax picked at ids: out[t] = log p(ids[t] | logits row t)
    NodeId gather_logprob(NodeId logits, std::span<const int> ids);
    // per-row KL(p || q) between softmaxes of two logit matrices; gradient
    // flows into p only (q is a frozen reference)
    NodeId kl_rows(NodeId p_logits, NodeId q_logits);
    // PPO clipped surrogate per element: min(r*A, clamp(r, 1-eps, 1+eps)*A);
    // advantages are constants
    NodeId ppo_clip_objective(NodeId ratio, const Tensor& adv, float eps);

    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_[check(id)].val; }
    const Tensor& grad(NodeId id) const { return nodes_[check(id)].grd; }
    size_t size() const { return nodes_.size(); }
    void reset();

private:
    struct Node {
        const char* op;
        Tensor val;
        Tensor grd;
        std::function<void(Tape&, Node&)> back;
        Param* p = nullptr;
    };

    std::vector<Node> nodes_;
    bool done_ = false;

    int check(NodeId id) const;
    NodeId push(const char* op, Tensor val, std::function<void(Tape&, Node&)> back, Param* p = nullptr);
    NodeId unary(const char* op, NodeId a, float (*fwd)(float), std::function<float(float x, float y)> dydx);
    Tensor& grd(NodeId id) { return nodes_[id].grd; }
    const Tensor& val(NodeId id) const { return nodes_[id].val; }
};

}  // namespace plus
