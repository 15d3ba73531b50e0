#include "plus/tape.hpp"

#include <algorithm>
#include <cmath>

namespace plus {

Param& ParamSet::add(const std::string& name, std::vector<int> shape, Rng& rng, double stddev) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data) v = static_cast<float>(rng.normal() * stddev);
    items.push_back(std::make_unique<Param>(name, std::move(t)));
    return *items.back();
}

Param& ParamSet::add_const(const std::string& name, std::vector<int> shape, float v) {
    items.push_back(std::make_unique<Param>(name, Tensor::full(std::move(shape), v)));
    return *items.back();
}

std::vector<Param*> ParamSet::all() const {
    std::vector<Param*> out;
    out.reserve(items.size());
    for (auto& p : items) out.push_back(p.get());
    return out;
}

void ParamSet::zero_grads() {
    for (auto& p : items) p->zero_grad();
}

Param* ParamSet::find(const std::string& name) const {
    for (auto& p : items)
        if (p->name == name) return p.get();
    return nullptr;
}

int Tape::check(NodeId id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw Error("tape: bad node id");
    return id;
}

void Tape::reset() {
    nodes_.clear();
    done_ = false;
}

Tape::NodeId Tape::push(const char* op, Tensor val, std::function<void(Tape&, Node&)> back, Param* p) {
    if (done_) reset();
    if (!val.all_finite()) throw NumericError(std::string("non-finite output of op ") + op);
    Node n;
    n.op = op;
    n.grd = Tensor::zeros(val.shape);
    n.val = std::move(val);
    n.back = std::move(back);
    n.p = p;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::constant(Tensor t) {
    return push("constant", std::move(t), nullptr);
}

Tape::NodeId Tape::param(Param& p) {
    return push("param", p.value, [](Tape&, Node& n) {
        for (size_t i = 0; i < n.grd.data.size(); ++i) n.p->grad.data[i] += n.grd.data[i];
    }, &p);
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b, bool transpose_b) {
    const Tensor& A = val(check(a));
    const Tensor& B = val(check(b));
    if (A.shape.size() != 2 || B.shape.size() != 2)
        throw ShapeError("matmul: rank-2 inputs required, got " + shape_str(A.shape) + " x " + shape_str(B.shape));
    const int m = A.rows(), k = A.cols();
    const int n = transpose_b ? B.rows() : B.cols();
    const int bk = transpose_b ? B.cols() : B.rows();
    if (k != bk)
        throw ShapeError("matmul: inner dims mismatch " + shape_str(A.shape) + " x " + shape_str(B.shape) +
                         (transpose_b ? " (B transposed)" : ""));
    Tensor C = Tensor::zeros({m, n});
    std::vector<double> acc(static_cast<size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        if (!transpose_b) {
            for (int kk = 0; kk < k; ++kk) {
                const double av = A.at(i, kk);
                const float* brow = &B.data[static_cast<size_t>(kk) * n];
                for (int j = 0; j < n; ++j) acc[j] += av * brow[j];
            }
        } else {
            for (int j = 0; j < n; ++j) {
                const float* arow = &A.data[static_cast<size_t>(i) * k];
                const float* brow = &B.data[static_cast<size_t>(j) * k];
                double s = 0.0;
                for (int kk = 0; kk < k; ++kk) s += static_cast<double>(arow[kk]) * brow[kk];
                acc[j] = s;
            }
        }
        for (int j = 0; j < n; ++j) C.at(i, j) = static_cast<float>(acc[j]);
    }
    return push("matmul", std::move(C), [a, b, transpose_b, m, n, k](Tape& t, Node& nd) {
        const Tensor& A = t.val(a);
        const Tensor& B = t.val(b);
        Tensor& dA = t.grd(a);
        Tensor& dB = t.grd(b);
        const Tensor& dC = nd.grd;
        if (!transpose_b) {
            // dA += dC * B^T ; dB += A^T * dC
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const float g = dC.at(i, j);
                    if (g == 0.0f) continue;
                    for (int kk = 0; kk < k; ++kk) {
                        dA.at(i, kk) += g * B.at(kk, j);
                        dB.at(kk, j) += A.at(i, kk) * g;
                    }
                }
        } else {
            // C = A * B^T (B is [n,k]) : dA += dC * B ; dB += dC^T * A
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const float g = dC.at(i, j);
                    if (g == 0.0f) continue;
                    for (int kk = 0; kk < k; ++kk) {
                        dA.at(i, kk) += g * B.at(j, kk);
                        dB.at(j, kk) += g * A.at(i, kk);
                    }
                }
        }
    });
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    const Tensor& A = val(check(a));
    const Tensor& B = val(check(b));
    enum { SAME, ROW, SCALAR } mode;
    if (A.same_shape(B))
        mode = SAME;
    else if (B.numel() == 1)
        mode = SCALAR;
    else if (A.shape.size() == 2 && B.numel() == A.cols())
        mode = ROW;
    else
        throw ShapeError("add: shapes " + shape_str(A.shape) + " and " + shape_str(B.shape) + " do not conform");
    Tensor C = A;
    if (mode == SAME) {
        for (size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
    } else if (mode == SCALAR) {
        for (auto& v : C.data) v += B.data[0];
    } else {
        const int n = A.cols();
        for (int i = 0; i < A.rows(); ++i)
            for (int j = 0; j < n; ++j) C.at(i, j) += B.data[static_cast<size_t>(j)];
    }
    return push("add", std::move(C), [a, b, mode](Tape& t, Node& nd) {
        Tensor& dA = t.grd(a);
        Tensor& dB = t.grd(b);
        const Tensor& dC = nd.grd;
        for (size_t i = 0; i < dC.data.size(); ++i) dA.data[i] += dC.data[i];
        if (mode == SAME) {
            for (size_t i = 0; i < dC.data.size(); ++i) dB.data[i] += dC.data[i];
        } else if (mode == SCALAR) {
            double s = 0.0;
            for (float g : dC.data) s += g;
            dB.data[0] += static_cast<float>(s);
        } else {
            const int n = static_cast<int>(dB.data.size());
            const int rows = dC.rows();
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int i = 0; i < rows; ++i) s += dC.at(i, j);
                dB.data[static_cast<size_t>(j)] += static_cast<float>(s);
            }
        }
    });
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    const Tensor& A = val(check(a));
    const Tensor& B = val(check(b));
    const bool scalar_b = (B.numel() == 1) && !A.same_shape(B);
    if (!scalar_b && !A.same_shape(B))
        throw ShapeError("mul: shapes " + shape_str(A.shape) + " and " + shape_str(B.shape) + " do not conform");
    Tensor C = A;
    if (scalar_b) {
        for (auto& v : C.data) v *= B.data[0];
    } else {
        for (size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
    }
    return push("mul", std::move(C), [a, b, scalar_b](Tape& t, Node& nd) {
        const Tensor& A = t.val(a);
        const Tensor& B = t.val(b);
        Tensor& dA = t.grd(a);
        Tensor& dB = t.grd(b);
        const Tensor& dC = nd.grd;
        if (scalar_b) {
            double s = 0.0;
            for (size_t i = 0; i < dC.data.size(); ++i) {
                dA.data[i] += dC.data[i] * B.data[0];
                s += static_cast<double>(dC.data[i]) * A.data[i];
            }
            dB.data[0] += static_cast<float>(s);
        } else {
            for (size_t i = 0; i < dC.data.size(); ++i) {
                dA.data[i] += dC.data[i] * B.data[i];
                dB.data[i] += dC.data[i] * A.data[i];
            }
        }
    });
}

Tape::NodeId Tape::unary(const char* op, NodeId a, float (*fwd)(float), std::function<float(float, float)> dydx) {
    const Tensor& A = val(check(a));
    Tensor C = A;
    for (auto& v : C.data) v = fwd(v);
    return push(op, std::move(C), [a, dydx](Tape& t, Node& nd) {
        const Tensor& A = t.val(a);
        Tensor& dA = t.grd(a);
        for (size_t i = 0; i < nd.grd.data.size(); ++i)
            dA.data[i] += nd.grd.data[i] * dydx(A.data[i], nd.val.data[i]);
    });
}

namespace {
float f_sigmoid(float x) {
    return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
}
float f_logsigmoid(float x) {
    return x >= 0.0f ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}
float f_normcdf(float x) {
    return 0.5f * (1.0f + std::erf(x * 0.70710678118654752440f));
}
}  // namespace

Tape::NodeId Tape::sigmoid(NodeId a) {
    return unary("sigmoid", a, f_sigmoid, [](float, float y) { return y * (1.0f - y); });
}

Tape::NodeId Tape::tanh(NodeId a) {
    return unary("tanh", a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Tape::NodeId Tape::log(NodeId a) {
    return unary("log", a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Tape::NodeId Tape::exp(NodeId a) {
    return unary("exp", a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Tape::NodeId Tape::sqrt(NodeId a) {
    return unary("sqrt", a, [](float x) { return std::sqrt(x); }, [](float, float y) { return 0.5f / y; });
}

Tape::NodeId Tape::logsigmoid(NodeId a) {
    return unary("logsigmoid", a, f_logsigmoid, [](float, float y) { return 1.0f - std::exp(y); });
}

Tape::NodeId Tape::normcdf(NodeId a) {
    return unary("normcdf", a, f_normcdf, [](float x, float) {
        return std::exp(-0.5f * x * x) * 0.39894228040143267794f;
    });
}

Tape::NodeId Tape::softmax_lastdim(NodeId a) {
    const Tensor& A = val(check(a));
    const int n = A.cols();
    const int rows = static_cast<int>(A.numel() / n);
    Tensor C = A;
    for (int i = 0; i < rows; ++i) {
        float* row = &C.data[static_cast<size_t>(i) * n];
        float mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        for (int j = 0; j < n; ++j)
            row[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
    }
    return push("softmax-lastdim", std::move(C), [a, n, rows](Tape& t, Node& nd) {
        Tensor& dA = t.grd(a);
        for (int i = 0; i < rows; ++i) {
            const float* y = &nd.val.data[static_cast<size_t>(i) * n];
            const float* dy = &nd.grd.data[static_cast<size_t>(i) * n];
            double dot = 0.0;
            for (int j = 0; j < n; ++j) dot += static_cast<double>(dy[j]) * y[j];
            float* dx = &dA.data[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j)
                dx[j] += static_cast<float>(y[j] * (static_cast<double>(dy[j]) - dot));
        }
    });
}

Tape::NodeId Tape::mean_lastdim(NodeId a) {
    const Tensor& A = val(check(a));
    const int n = A.cols();
    const int rows = static_cast<int>(A.numel() / n);
    Tensor C = Tensor::zeros({rows});
    for (int i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += A.data[static_cast<size_t>(i) * n + j];
        C.data[static_cast<size_t>(i)] = static_cast<float>(s / n);
    }
    return push("mean-lastdim", std::move(C), [a, n, rows](Tape& t, Node& nd) {
        Tensor& dA = t.grd(a);
        for (int i = 0; i < rows; ++i) {
            const float g = nd.grd.data[static_cast<size_t>(i)] / static_cast<float>(n);
            for (int j = 0; j < n; ++j) dA.data[static_cast<size_t>(i) * n + j] += g;
        }
    });
}

Tape::NodeId Tape::mean_all(NodeId a) {
    const Tensor& A = val(check(a));
    const std::int64_t n = A.numel();
    double s = 0.0;
    for (float v : A.data) s += v;
    Tensor C = Tensor::scalar(static_cast<float>(s / static_cast<double>(n)));
    return push("mean-all", std::move(C), [a, n](Tape& t, Node& nd) {
        Tensor& dA = t.grd(a);
        const float g = nd.grd.data[0] / static_cast<float>(n);
        for (auto& v : dA.data) v += g;
    });
}

Tape::NodeId Tape::layernorm(NodeId a, NodeId gain, NodeId bias) {
    const Tensor& A = val(check(a));
    const Tensor& G = val(check(gain));
    const Tensor& B = val(check(bias));
    const int n = A.cols();
    const int rows = static_cast<int>(A.numel() / n);
    if (G.numel() != n || B.numel() != n)
        throw ShapeError("layernorm: gain/bias size must match last dim " + std::to_string(n));
    constexpr double kEps = 1e-5;
    Tensor C = Tensor::zeros(A.shape);
    Tensor xhat = Tensor::zeros(A.shape);
    std::vector<float> inv_sigma(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        const float* x = &A.data[static_cast<size_t>(i) * n];
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += x[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + kEps);
        inv_sigma[static_cast<size_t>(i)] = static_cast<float>(is);
        for (int j = 0; j < n; ++j) {
            const float xh = static_cast<float>((x[j] - mu) * is);
            xhat.data[static_cast<size_t>(i) * n + j] = xh;
            C.data[static_cast<size_t>(i) * n + j] = xh * G.data[static_cast<size_t>(j)] + B.data[static_cast<size_t>(j)];
        }
    }
    auto xh_keep = std::make_shared<Tensor>(std::move(xhat));
    auto is_keep = std::make_shared<std::vector<float>>(std::move(inv_sigma));
    return push("layernorm", std::move(C), [a, gain, bias, n, rows, xh_keep, is_keep](Tape& t, Node& nd) {
        Tensor& dA = t.grd(a);
        Tensor& dG = t.grd(gain);
        Tensor& dB = t.grd(bias);
        const Tensor& G = t.val(gain);
        for (int i = 0; i < rows; ++i) {
            const float* dy = &nd.grd.data[static_cast<size_t>(i) * n];
            const float* xh = &xh_keep->data[static_cast<size_t>(i) * n];
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double dxh = static_cast<double>(dy[j]) * G.data[static_cast<size_t>(j)];
                m1 += dxh;
                m2 += dxh * xh[j];
                dG.data[static_cast<size_t>(j)] += dy[j] * xh[j];
                dB.data[static_cast<size_t>(j)] += dy[j];
            }
            m1 /= n;
            m2 /= n;
            const double is = (*is_keep)[static_cast<size_t>(i)];
            for (int j = 0; j < n; ++j) {
                const double dxh = static_cast<double>(dy[j]) * G.data[static_cast<size_t>(j)];
                dA.data[static_cast<size_t>(i) * n + j] += static_cast<float>(is * (dxh - m1 - xh[j] * m2));
            }
        }
    });
}

Tape::NodeId Tape::embed_lookup(NodeId table, std::span<const int> ids) {
    const Tensor& T_ = val(check(table));
    if (T_.shape.size() != 2) throw ShapeError("embed-lookup: table must be rank 2");
    const int V = T_.rows(), d = T_.cols();
    const int n = static_cast<int>(ids.size());
    Tensor C = Tensor::zeros({n, d});
    std::vector<int> idv(ids.begin(), ids.end());
    for (int i = 0; i < n; ++i) {
        if (idv[i] < 0 || idv[i] >= V)
            throw ShapeError("embed-lookup: id " + std::to_string(idv[i]) + " out of range [0," + std::to_string(V) + ")");
        std::copy_n(&T_.data[static_cast<size_t>(idv[i]) * d], d, &C.data[static_cast<size_t>(i) * d]);
    }
    return push("embed-lookup", std::move(C), [table, idv, d](Tape& t, Node& nd) {
        Tensor& dT = t.grd(table);
        for (size_t i = 0; i < idv.size(); ++i)
            for (int j = 0; j < d; ++j)
                dT.data[static_cast<size_t>(idv[i]) * d + j] += nd.grd.data[i * d + j];
    });
}

Tape::NodeId Tape::concat(NodeId a, NodeId b, int dim) {
    const Tensor& A = val(check(a));
    const Tensor& B = val(check(b));
    if (A.shape.size() != 2 || B.shape.size() != 2) throw ShapeError("concat: rank-2 inputs required");
    Tensor C;
    if (dim == 0) {
        if (A.cols() != B.cols()) throw ShapeError("concat dim 0: column mismatch");
        C = Tensor::zeros({A.rows() + B.rows(), A.cols()});
        std::copy(A.data.begin(), A.data.end(), C.data.begin());
        std::copy(B.data.begin(), B.data.end(), C.data.begin() + A.data.size());
    } else if (dim == 1) {
        if (A.rows() != B.rows()) throw ShapeError("concat dim 1: row mismatch");
        C = Tensor::zeros({A.rows(), A.cols() + B.cols()});
        for (int i = 0; i < A.rows(); ++i) {
            std::copy_n(&A.data[static_cast<size_t>(i) * A.cols()], A.cols(), &C.at(i, 0));
            std::copy_n(&B.data[static_cast<size_t>(i) * B.cols()], B.cols(), &C.at(i, A.cols()));
        }
    } else {
        throw ShapeError("concat: dim must be 0 or 1");
    }
    const int ar = A.rows(), ac = A.cols(), bc = B.cols();
    return push("concat", std::move(C), [a, b, dim, ar, ac, bc](Tape& t, Node& nd) {
        Tensor& dA = t.grd(a);
        Tensor& dB = t.grd(b);
        if (dim == 0) {
            for (size_t i = 0; i < dA.data.size(); ++i) dA.data[i] += nd.grd.data[i];
            for (size_t i = 0; i < dB.data.size(); ++i) dB.data[i] += nd.grd.data[dA.data.size() + i];
        } else {
            for (int i = 0; i < ar; ++i) {
                for (int j = 0; j < ac; ++j) dA.at(i, j) += nd.grd.at(i, j);
                for (int j = 0; j < bc; ++j) dB.at(i, j) += nd.grd.at(i, ac + j);
            }
        }
    });
}

Tape::NodeId Tape::slice(NodeId a, int dim, int start, int end) {
    const Tensor& A = val(check(a));
    if (A.shape.size() != 2) throw ShapeError("slice: rank-2 input required");
    const int R = A.rows(), Cc = A.cols();
    const int lim = dim == 0 ? R : Cc;
    if (dim != 0 && dim != 1) throw ShapeError("slice: dim must be 0 or 1");
    if (start < 0 || end > lim || start >= end)
        throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(end) + ") out of bounds for extent " + std::to_string(lim));
    Tensor C;
    if (dim == 0) {
        C = Tensor::zeros({end - start, Cc});
        std::copy_n(&A.data[static_cast<size_t>(start) * Cc], static_cast<size_t>(end - start) * Cc, C.data.begin());
    } else {
        C = Tensor::zeros({R, end - start});
        for (int i = 0; i < R; ++i)
            std::copy_n(&A.data[static_cast<size_t>(i) * Cc + start], end - start, &C.data[static_cast<size_t>(i) * (end - start)]);
    }
    return push("slice", std::move(C), [a, dim, start, end, R, Cc](Tape& t, Node& nd) {
        Tensor& dA = t.grd(a);
        if (dim == 0) {
            for (size_t i = 0; i < nd.grd.data.size(); ++i)
                dA.data[static_cast<size_t>(start) * Cc + i] += nd.grd.data[i];
        } else {
            const int w = end - start;
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < w; ++j) dA.at(i, start + j) += nd.grd.data[static_cast<size_t>(i) * w + j];
        }
    });
}

Tape::NodeId Tape::causal_attention_scores(NodeId q, NodeId k, float scl) {
    const Tensor& Q = val(check(q));
    const Tensor& K = val(check(k));
    if (Q.shape.size() != 2 || K.shape.size() != 2 || Q.cols() != K.cols())
        throw ShapeError("causal-masked-attention-score: Q " + shape_str(Q.shape) + " vs K " + shape_str(K.shape));
    const int T = Q.rows(), Tk = K.rows(), d = Q.cols();
    if (T != Tk) throw ShapeError("causal-masked-attention-score: Q/K row mismatch");
    constexpr float kMask = -1e30f;
    Tensor S = Tensor::full({T, T}, kMask);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j <= i; ++j) {
            double s = 0.0;
            for (int c = 0; c < d; ++c)
                s += static_cast<double>(Q.at(i, c)) * K.at(j, c);
            S.at(i, j) = static_cast<float>(s * scl);
        }
    return push("causal-masked-attention-score", std::move(S), [q, k, scl, T, d](Tape& t, Node& nd) {
        const Tensor& Q = t.val(q);
        const Tensor& K = t.val(k);
        Tensor& dQ = t.grd(q);
        Tensor& dK = t.grd(k);
        for (int i = 0; i < T; ++i)
            for (int j = 0; j <= i; ++j) {
                const float g = nd.grd.at(i, j) * scl;
                if (g == 0.0f) continue;
                for (int c = 0; c < d; ++c) {
                    dQ.at(i, c) += g * K.at(j, c);
                    dK.at(j, c) += g * Q.at(i, c);
                }
            }
    });
}

Tape::NodeId Tape::gather_logprob(NodeId logits, std::span<const int> ids) {
    const Tensor& L = val(check(logits));
    const int T = L.rows(), V = L.cols();
    if (static_cast<int>(ids.size()) != T)
        throw ShapeError("gather-logprob: ids size " + std::to_string(ids.size()) + " vs rows " + std::to_string(T));
    std::vector<int> idv(ids.begin(), ids.end());
    Tensor out = Tensor::zeros({T});
    auto probs = std::make_shared<Tensor>(Tensor::zeros({T, V}));
    for (int t = 0; t < T; ++t) {
        const float* row = &L.data[static_cast<size_t>(t) * V];
        float mx = row[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double lz = std::log(z) + mx;
        if (idv[t] < 0 || idv[t] >= V) throw ShapeError("gather-logprob: id out of range");
        out.data[static_cast<size_t>(t)] = static_cast<float>(row[idv[t]] - lz);
        for (int j = 0; j < V; ++j)
            probs->data[static_cast<size_t>(t) * V + j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - lz));
    }
    return push("gather-logprob", std::move(out), [logits, idv, V, probs](Tape& t, Node& nd) {
        Tensor& dL = t.grd(logits);
        for (size_t tt = 0; tt < idv.size(); ++tt) {
            const float g = nd.grd.data[tt];
            if (g == 0.0f) continue;
            for (int j = 0; j < V; ++j)
                dL.data[tt * V + j] += g * ((j == idv[tt] ? 1.0f : 0.0f) - probs->data[tt * V + j]);
        }
    });
}

Tape::NodeId Tape::kl_rows(NodeId p_logits, NodeId q_logits) {
    const Tensor& P = val(check(p_logits));
    const Tensor& Q = val(check(q_logits));
    if (!P.same_shape(Q)) throw ShapeError("kl-rows: shape mismatch " + shape_str(P.shape) + " vs " + shape_str(Q.shape));
    const int T = P.rows(), V = P.cols();
    auto logp = std::make_shared<Tensor>(Tensor::zeros({T, V}));
    auto logq = std::make_shared<Tensor>(Tensor::zeros({T, V}));
    auto logsm = [&](const Tensor& L, Tensor& out, int t) {
        const float* row = &L.data[static_cast<size_t>(t) * V];
        float mx = row[0];
        for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < V; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double lz = std::log(z) + mx;
        for (int j = 0; j < V; ++j) out.data[static_cast<size_t>(t) * V + j] = static_cast<float>(row[j] - lz);
    };
    Tensor out = Tensor::zeros({T});
    for (int t = 0; t < T; ++t) {
        logsm(P, *logp, t);
        logsm(Q, *logq, t);
        double kl = 0.0;
        for (int j = 0; j < V; ++j) {
            const double lp = logp->data[static_cast<size_t>(t) * V + j];
            kl += std::exp(lp) * (lp - logq->data[static_cast<size_t>(t) * V + j]);
        }
        out.data[static_cast<size_t>(t)] = static_cast<float>(std::max(kl, 0.0));
    }
    return push("kl-rows", std::move(out), [p_logits, V, logp, logq](Tape& t, Node& nd) {
        Tensor& dP = t.grd(p_logits);
        const int T = nd.val.rows();
        for (int tt = 0; tt < T; ++tt) {
            const float g = nd.grd.data[static_cast<size_t>(tt)];
            if (g == 0.0f) continue;
            const float kl = nd.val.data[static_cast<size_t>(tt)];
            for (int j = 0; j < V; ++j) {
                const float lp = logp->data[static_cast<size_t>(tt) * V + j];
                const float lq = logq->data[static_cast<size_t>(tt) * V + j];
                dP.data[static_cast<size_t>(tt) * V + j] += g * std::exp(lp) * (lp - lq - kl);
            }
        }
    });
}

Tape::NodeId Tape::ppo_clip_objective(NodeId ratio, const Tensor& adv, float eps) {
    const Tensor& R = val(check(ratio));
    if (R.numel() != adv.numel())
        throw ShapeError("ppo-clip: ratio/advantage size mismatch");
    Tensor out = Tensor::zeros(R.shape);
    auto advk = std::make_shared<Tensor>(adv);
    const float lo = 1.0f - eps, hi = 1.0f + eps;
    for (size_t i = 0; i < R.data.size(); ++i) {
        const float a = adv.data[i];
        const float s1 = R.data[i] * a;
        const float s2 = std::clamp(R.data[i], lo, hi) * a;
        out.data[i] = std::min(s1, s2);
    }
    return push("ppo-clip", std::move(out), [ratio, advk, lo, hi](Tape& t, Node& nd) {
        const Tensor& R = t.val(ratio);
        Tensor& dR = t.grd(ratio);
        for (size_t i = 0; i < R.data.size(); ++i) {
            const float a = advk->data[i];
            const float r = R.data[i];
            const float s1 = r * a;
            const float s2 = std::clamp(r, lo, hi) * a;
            float d;
            if (s1 <= s2) {
                d = a;  // unclipped branch is the min
            } else {
                d = (r > lo && r < hi) ? a : 0.0f;
            }
            dR.data[i] += nd.grd.data[i] * d;
        }
    });
}

void Tape::backward(NodeId loss) {
    if (done_) throw Error("tape: backward called twice without a new forward pass");
    if (nodes_.empty()) throw Error("tape: backward on empty tape");
    check(loss);
    if (nodes_[loss].val.numel() != 1)
        throw ShapeError("tape: loss node must be scalar, got " + shape_str(nodes_[loss].val.shape));
    nodes_[loss].grd.data[0] = 1.0f;
    for (int i = loss; i >= 0; --i) {
        if (nodes_[i].back) nodes_[i].back(*this, nodes_[i]);
    }
    done_ = true;
}

}  // namespace plus
