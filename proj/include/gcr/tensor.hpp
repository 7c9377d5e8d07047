#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "gcr/errors.hpp"

namespace gcr {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense 64-bit tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a value-style handle onto a shared node. Nodes produced by
/// operations keep backpointers to their parents; the resulting DAG is the
/// computation record traversed by backward(). Values are immutable after
/// construction except for leaf parameters, which the optimizer updates
/// between records via values_mut().
class Tensor {
public:
    struct Node;
    using NodePtr = std::shared_ptr<Node>;

    struct Node {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // sized only while participating in a backward pass
        bool requires_grad = false;
        std::vector<NodePtr> parents;
        // accumulates self.grad into parents' grads
        std::function<void(Node&)> backprop;
        // recomputes self.values from parents (record replay)
        std::function<void(Node&)> recompute;
        const char* op = "leaf";

        std::size_t size() const { return values.size(); }
    };

    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (values.size() != numel(shape))
            throw DimensionError("tensor data length " + std::to_string(values.size()) +
                                 " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->values = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<double> v(numel(shape), 0.0);
        return from(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        std::vector<double> v(numel(shape), value);
        return from(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }

    std::span<const double> values() const { return node_->values; }
    std::vector<double>& values_mut() { return node_->values; }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }

    double item() const {
        if (size() != 1) throw ContractError("item() requires a scalar tensor, got " + shape_str(shape()));
        return node_->values[0];
    }

    bool is_scalar() const { return size() == 1; }

    /// Copy of the values with gradient tracking severed.
    Tensor detach() const {
        return from(node_->shape, node_->values, false);
    }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

namespace detail {

inline Tensor::NodePtr make_op_node(const char* op, Shape shape,
                                    std::vector<Tensor::NodePtr> parents) {
    auto n = std::make_shared<Tensor::Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->values.resize(numel(n->shape));
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

inline void ensure_grad(Tensor::Node& n) {
    if (n.grad.size() != n.values.size()) n.grad.assign(n.values.size(), 0.0);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

inline void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value encountered");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and reduction primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    auto n = detail::make_op_node("add", a.shape(), {a.node(), b.node()});
    n->recompute = [](Tensor::Node& self) {
        const auto& x = self.parents[0]->values;
        const auto& y = self.parents[1]->values;
        for (std::size_t i = 0; i < self.size(); ++i) self.values[i] = x[i] + y[i];
    };
    n->recompute(*n);
    n->backprop = [](Tensor::Node& self) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            detail::ensure_grad(p);
            for (std::size_t i = 0; i < self.size(); ++i) p.grad[i] += self.grad[i];
        }
    };
    return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    auto n = detail::make_op_node("sub", a.shape(), {a.node(), b.node()});
    n->recompute = [](Tensor::Node& self) {
        const auto& x = self.parents[0]->values;
        const auto& y = self.parents[1]->values;
        for (std::size_t i = 0; i < self.size(); ++i) self.values[i] = x[i] - y[i];
    };
    n->recompute(*n);
    n->backprop = [](Tensor::Node& self) {
        auto& a_ = *self.parents[0];
        auto& b_ = *self.parents[1];
        if (a_.requires_grad) {
            detail::ensure_grad(a_);
            for (std::size_t i = 0; i < self.size(); ++i) a_.grad[i] += self.grad[i];
        }
        if (b_.requires_grad) {
            detail::ensure_grad(b_);
            for (std::size_t i = 0; i < self.size(); ++i) b_.grad[i] -= self.grad[i];
        }
    };
    return Tensor(n);
}

inline Tensor hadamard(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "hadamard");
    auto n = detail::make_op_node("hadamard", a.shape(), {a.node(), b.node()});
    n->recompute = [](Tensor::Node& self) {
        const auto& x = self.parents[0]->values;
        const auto& y = self.parents[1]->values;
        for (std::size_t i = 0; i < self.size(); ++i) self.values[i] = x[i] * y[i];
    };
    n->recompute(*n);
    n->backprop = [](Tensor::Node& self) {
        auto& a_ = *self.parents[0];
        auto& b_ = *self.parents[1];
        if (a_.requires_grad) {
            detail::ensure_grad(a_);
            for (std::size_t i = 0; i < self.size(); ++i) a_.grad[i] += self.grad[i] * b_.values[i];
        }
        if (b_.requires_grad) {
            detail::ensure_grad(b_);
            for (std::size_t i = 0; i < self.size(); ++i) b_.grad[i] += self.grad[i] * a_.values[i];
        }
    };
    return Tensor(n);
}

inline Tensor scale(const Tensor& a, double c) {
    auto n = detail::make_op_node("scale", a.shape(), {a.node()});
    n->recompute = [c](Tensor::Node& self) {
        const auto& x = self.parents[0]->values;
        for (std::size_t i = 0; i < self.size(); ++i) self.values[i] = c * x[i];
    };
    n->recompute(*n);
    n->backprop = [c](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < self.size(); ++i) p.grad[i] += c * self.grad[i];
    };
    return Tensor(n);
}

inline Tensor sum(const Tensor& a) {
    auto n = detail::make_op_node("sum", {1}, {a.node()});
    n->recompute = [](Tensor::Node& self) {
        double s = 0.0;
        for (double x : self.parents[0]->values) s += x;
        self.values[0] = s;
    };
    n->recompute(*n);
    n->backprop = [](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < p.size(); ++i) p.grad[i] += self.grad[0];
    };
    return Tensor(n);
}

inline Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor relu(const Tensor& a) {
    auto n = detail::make_op_node("relu", a.shape(), {a.node()});
    n->recompute = [](Tensor::Node& self) {
        const auto& x = self.parents[0]->values;
        for (std::size_t i = 0; i < self.size(); ++i) self.values[i] = x[i] > 0.0 ? x[i] : 0.0;
    };
    n->recompute(*n);
    // subgradient at exactly 0 is 0
    n->backprop = [](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < self.size(); ++i)
            if (p.values[i] > 0.0) p.grad[i] += self.grad[i];
    };
    return Tensor(n);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto n = detail::make_op_node("reshape", std::move(shape), {a.node()});
    n->recompute = [](Tensor::Node& self) { self.values = self.parents[0]->values; };
    n->recompute(*n);
    n->backprop = [](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < self.size(); ++i) p.grad[i] += self.grad[i];
    };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

/// C[m,n] = A[m,k] · B[k,n]. Gradient rule: dA = dC·Bᵀ, dB = Aᵀ·dC.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    auto n = detail::make_op_node("matmul", {m, n2}, {a.node(), b.node()});
    n->recompute = [m, k, n2](Tensor::Node& self) {
        const auto& A = self.parents[0]->values;
        const auto& B = self.parents[1]->values;
        std::fill(self.values.begin(), self.values.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t t = 0; t < k; ++t) {
                const double av = A[i * k + t];
                for (std::size_t j = 0; j < n2; ++j)
                    self.values[i * n2 + j] += av * B[t * n2 + j];
            }
    };
    n->recompute(*n);
    n->backprop = [m, k, n2](Tensor::Node& self) {
        auto& A = *self.parents[0];
        auto& B = *self.parents[1];
        if (A.requires_grad) {
            detail::ensure_grad(A);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n2; ++j)
                        acc += self.grad[i * n2 + j] * B.values[t * n2 + j];
                    A.grad[i * k + t] += acc;
                }
        }
        if (B.requires_grad) {
            detail::ensure_grad(B);
            for (std::size_t t = 0; t < k; ++t)
                for (std::size_t j = 0; j < n2; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        acc += A.values[i * k + t] * self.grad[i * n2 + j];
                    B.grad[t * n2 + j] += acc;
                }
        }
    };
    return Tensor(n);
}

/// y[i,j] = x[i,j] + b[j] for x[n,d], b[d].
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0))
        throw DimensionError("add_row_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    auto n = detail::make_op_node("add_row_bias", x.shape(), {x.node(), b.node()});
    n->recompute = [rows, cols](Tensor::Node& self) {
        const auto& X = self.parents[0]->values;
        const auto& B = self.parents[1]->values;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
                self.values[i * cols + j] = X[i * cols + j] + B[j];
    };
    n->recompute(*n);
    n->backprop = [rows, cols](Tensor::Node& self) {
        auto& X = *self.parents[0];
        auto& B = *self.parents[1];
        if (X.requires_grad) {
            detail::ensure_grad(X);
            for (std::size_t i = 0; i < self.size(); ++i) X.grad[i] += self.grad[i];
        }
        if (B.requires_grad) {
            detail::ensure_grad(B);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) B.grad[j] += self.grad[i * cols + j];
        }
    };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

namespace detail {

// max-shifted softmax of one row, written into out
inline void softmax_row(const double* z, std::size_t c, double* out) {
    double m = z[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, z[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        out[j] = std::exp(z[j] - m);
        denom += out[j];
    }
    for (std::size_t j = 0; j < c; ++j) out[j] /= denom;
}

}  // namespace detail

/// Row-wise softmax with max-shift stabilization. Rows sum to 1.
inline Tensor softmax_rows(const Tensor& z) {
    if (z.rank() != 2 || z.dim(1) < 1)
        throw DimensionError("softmax_rows: expects [n x C], got " + shape_str(z.shape()));
    detail::check_finite(z.values(), "softmax_rows");
    const std::size_t rows = z.dim(0), cols = z.dim(1);
    auto n = detail::make_op_node("softmax_rows", z.shape(), {z.node()});
    n->recompute = [rows, cols](Tensor::Node& self) {
        const auto& Z = self.parents[0]->values;
        for (std::size_t i = 0; i < rows; ++i)
            detail::softmax_row(&Z[i * cols], cols, &self.values[i * cols]);
    };
    n->recompute(*n);
    n->backprop = [rows, cols](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* y = &self.values[i * cols];
            const double* dy = &self.grad[i * cols];
            double dot = 0.0;
            for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < cols; ++j)
                p.grad[i * cols + j] += y[j] * (dy[j] - dot);
        }
    };
    return Tensor(n);
}

/// Row-wise log-softmax; the numerically safe path for cross-entropy.
inline Tensor log_softmax_rows(const Tensor& z) {
    if (z.rank() != 2 || z.dim(1) < 1)
        throw DimensionError("log_softmax_rows: expects [n x C], got " + shape_str(z.shape()));
    detail::check_finite(z.values(), "log_softmax_rows");
    const std::size_t rows = z.dim(0), cols = z.dim(1);
    auto n = detail::make_op_node("log_softmax_rows", z.shape(), {z.node()});
    n->recompute = [rows, cols](Tensor::Node& self) {
        const auto& Z = self.parents[0]->values;
        for (std::size_t i = 0; i < rows; ++i) {
            const double* zr = &Z[i * cols];
            double m = zr[0];
            for (std::size_t j = 1; j < cols; ++j) m = std::max(m, zr[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < cols; ++j) denom += std::exp(zr[j] - m);
            const double lse = m + std::log(denom);
            for (std::size_t j = 0; j < cols; ++j) self.values[i * cols + j] = zr[j] - lse;
        }
    };
    n->recompute(*n);
    n->backprop = [rows, cols](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* ly = &self.values[i * cols];
            const double* dy = &self.grad[i * cols];
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += dy[j];
            for (std::size_t j = 0; j < cols; ++j)
                p.grad[i * cols + j] += dy[j] - std::exp(ly[j]) * s;
        }
    };
    return Tensor(n);
}

/// −(1/n) Σ_i logp[i, labels[i]]; the reduction half of cross-entropy.
inline Tensor nll_mean(const Tensor& logp, const std::vector<int>& labels) {
    if (logp.rank() != 2) throw DimensionError("nll_mean: expects [n x C]");
    const std::size_t rows = logp.dim(0), cols = logp.dim(1);
    if (labels.size() != rows)
        throw ContractError("nll_mean: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(rows) + " rows");
    for (std::size_t i = 0; i < rows; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= cols)
            throw ContractError("nll_mean: label " + std::to_string(labels[i]) +
                                " out of range [0, " + std::to_string(cols) + ")");
    auto n = detail::make_op_node("nll_mean", {1}, {logp.node()});
    auto lab = labels;
    n->recompute = [rows, cols, lab](Tensor::Node& self) {
        const auto& L = self.parents[0]->values;
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s -= L[i * cols + static_cast<std::size_t>(lab[i])];
        self.values[0] = s / static_cast<double>(rows);
    };
    n->recompute(*n);
    n->backprop = [rows, cols, lab](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        const double g = self.grad[0] / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i)
            p.grad[i * cols + static_cast<std::size_t>(lab[i])] -= g;
    };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

enum class Padding { valid, same };

/// Stride-1 cross-correlation of x[n,c,h,w] with k[o,c,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& k, Padding padding) {
    if (x.rank() != 4 || k.rank() != 4)
        throw DimensionError("conv2d: expects x[n,c,h,w], k[o,c,kh,kw]; got " +
                             shape_str(x.shape()) + " and " + shape_str(k.shape()));
    if (x.dim(1) != k.dim(1))
        throw DimensionError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                             shape_str(k.shape()));
    const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);

    std::size_t ph = 0, pw = 0, oh = 0, ow = 0;
    if (padding == Padding::same) {
        ph = (kh - 1) / 2;
        pw = (kw - 1) / 2;
        oh = h;
        ow = w;
        if (kh > h + (kh - 1) || kw > w + (kw - 1))
            throw DimensionError("conv2d: kernel larger than padded input");
    } else {
        if (kh > h || kw > w)
            throw DimensionError("conv2d: kernel " + shape_str(k.shape()) +
                                 " larger than input " + shape_str(x.shape()));
        oh = h - kh + 1;
        ow = w - kw + 1;
    }

    auto node = detail::make_op_node("conv2d", {nb, o, oh, ow}, {x.node(), k.node()});
    const auto xi = [=](std::size_t b, std::size_t ch, std::size_t i, std::size_t j) {
        return ((b * c + ch) * h + i) * w + j;
    };
    const auto ki = [=](std::size_t oc, std::size_t ch, std::size_t i, std::size_t j) {
        return ((oc * c + ch) * kh + i) * kw + j;
    };
    const auto yi = [=](std::size_t b, std::size_t oc, std::size_t i, std::size_t j) {
        return ((b * o + oc) * oh + i) * ow + j;
    };
    node->recompute = [=](Tensor::Node& self) {
        const auto& X = self.parents[0]->values;
        const auto& K = self.parents[1]->values;
        std::fill(self.values.begin(), self.values.end(), 0.0);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t oc = 0; oc < o; ++oc)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        double acc = 0.0;
                        for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t u = 0; u < kh; ++u)
                                for (std::size_t v = 0; v < kw; ++v) {
                                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) -
                                                              static_cast<std::ptrdiff_t>(ph);
                                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) -
                                                              static_cast<std::ptrdiff_t>(pw);
                                    if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                                        jj >= static_cast<std::ptrdiff_t>(w))
                                        continue;
                                    acc += X[xi(b, ch, static_cast<std::size_t>(ii),
                                                static_cast<std::size_t>(jj))] *
                                           K[ki(oc, ch, u, v)];
                                }
                        self.values[yi(b, oc, i, j)] = acc;
                    }
    };
    node->recompute(*node);
    node->backprop = [=](Tensor::Node& self) {
        auto& X = *self.parents[0];
        auto& K = *self.parents[1];
        const bool gx = X.requires_grad, gk = K.requires_grad;
        if (gx) detail::ensure_grad(X);
        if (gk) detail::ensure_grad(K);
        if (!gx && !gk) return;
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t oc = 0; oc < o; ++oc)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        const double g = self.grad[yi(b, oc, i, j)];
                        if (g == 0.0) continue;
                        for (std::size_t ch = 0; ch < c; ++ch)
                            for (std::size_t u = 0; u < kh; ++u)
                                for (std::size_t v = 0; v < kw; ++v) {
                                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + u) -
                                                              static_cast<std::ptrdiff_t>(ph);
                                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + v) -
                                                              static_cast<std::ptrdiff_t>(pw);
                                    if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) ||
                                        jj >= static_cast<std::ptrdiff_t>(w))
                                        continue;
                                    const std::size_t xo = xi(b, ch, static_cast<std::size_t>(ii),
                                                              static_cast<std::size_t>(jj));
                                    if (gx) X.grad[xo] += g * K.values[ki(oc, ch, u, v)];
                                    if (gk) K.grad[ki(oc, ch, u, v)] += g * X.values[xo];
                                }
                    }
    };
    return Tensor(node);
}

/// y[b,c] = x[b,c] + bias[c] over [n,c,h,w].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 4 || b.rank() != 1 || x.dim(1) != b.dim(0))
        throw DimensionError("add_channel_bias: incompatible shapes " + shape_str(x.shape()) +
                             " and " + shape_str(b.shape()));
    const std::size_t nb = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    auto n = detail::make_op_node("add_channel_bias", x.shape(), {x.node(), b.node()});
    n->recompute = [nb, c, hw](Tensor::Node& self) {
        const auto& X = self.parents[0]->values;
        const auto& B = self.parents[1]->values;
        for (std::size_t bi = 0; bi < nb; ++bi)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < hw; ++p)
                    self.values[(bi * c + ch) * hw + p] = X[(bi * c + ch) * hw + p] + B[ch];
    };
    n->recompute(*n);
    n->backprop = [nb, c, hw](Tensor::Node& self) {
        auto& X = *self.parents[0];
        auto& B = *self.parents[1];
        if (X.requires_grad) {
            detail::ensure_grad(X);
            for (std::size_t i = 0; i < self.size(); ++i) X.grad[i] += self.grad[i];
        }
        if (B.requires_grad) {
            detail::ensure_grad(B);
            for (std::size_t bi = 0; bi < nb; ++bi)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t p = 0; p < hw; ++p)
                        B.grad[ch] += self.grad[(bi * c + ch) * hw + p];
        }
    };
    return Tensor(n);
}

/// Non-overlapping max pooling with window = stride; trailing rows/cols that
/// do not fill a window are dropped. Ties route the gradient to the first
/// maximal element in scan order.
inline Tensor maxpool2d(const Tensor& x, std::size_t window) {
    if (x.rank() != 4) throw DimensionError("maxpool2d: expects [n,c,h,w]");
    if (window < 1 || x.dim(2) < window || x.dim(3) < window)
        throw DimensionError("maxpool2d: window " + std::to_string(window) +
                             " does not fit input " + shape_str(x.shape()));
    const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / window, ow = w / window;
    auto n = detail::make_op_node("maxpool2d", {nb, c, oh, ow}, {x.node()});
    n->recompute = [=](Tensor::Node& self) {
        const auto& X = self.parents[0]->values;
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        double best = -std::numeric_limits<double>::infinity();
                        for (std::size_t u = 0; u < window; ++u)
                            for (std::size_t v = 0; v < window; ++v) {
                                const double val =
                                    X[((b * c + ch) * h + i * window + u) * w + j * window + v];
                                if (val > best) best = val;
                            }
                        self.values[((b * c + ch) * oh + i) * ow + j] = best;
                    }
    };
    n->recompute(*n);
    n->backprop = [=](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < oh; ++i)
                    for (std::size_t j = 0; j < ow; ++j) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t arg = 0;
                        for (std::size_t u = 0; u < window; ++u)
                            for (std::size_t v = 0; v < window; ++v) {
                                const std::size_t idx =
                                    ((b * c + ch) * h + i * window + u) * w + j * window + v;
                                if (p.values[idx] > best) {
                                    best = p.values[idx];
                                    arg = idx;
                                }
                            }
                        p.grad[arg] += self.grad[((b * c + ch) * oh + i) * ow + j];
                    }
    };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// gather / triangle / arccos — building blocks of the alignment losses
// ---------------------------------------------------------------------------

/// Strict upper triangle of an [n,n] matrix as a vector, row-major pair
/// order: (0,1),(0,2),…,(0,n−1),(1,2),…
inline Tensor triu_vec(const Tensor& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw DimensionError("triu_vec: expects square matrix, got " + shape_str(a.shape()));
    const std::size_t n = a.dim(0);
    if (n < 2) throw DegenerateInputError("triu_vec: batch of size " + std::to_string(n) +
                                          " has no off-diagonal pairs");
    const std::size_t m = n * (n - 1) / 2;
    auto node = detail::make_op_node("triu_vec", {m}, {a.node()});
    node->recompute = [n](Tensor::Node& self) {
        const auto& A = self.parents[0]->values;
        std::size_t p = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) self.values[p++] = A[i * n + j];
    };
    node->recompute(*node);
    node->backprop = [n](Tensor::Node& self) {
        auto& p0 = *self.parents[0];
        if (!p0.requires_grad) return;
        detail::ensure_grad(p0);
        std::size_t p = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) p0.grad[i * n + j] += self.grad[p++];
    };
    return Tensor(node);
}

/// Selects entries of a vector at fixed indices. The index set is part of
/// the record (it does not re-derive under replay).
inline Tensor gather(const Tensor& v, std::vector<std::size_t> indices) {
    if (v.rank() != 1) throw DimensionError("gather: expects a vector");
    for (std::size_t idx : indices)
        if (idx >= v.size()) throw ContractError("gather: index out of range");
    const std::size_t m = indices.size();
    auto node = detail::make_op_node("gather", {std::max<std::size_t>(m, 1)}, {v.node()});
    if (m == 0) {
        node->shape = {0};
        node->values.clear();
    }
    auto idxs = std::move(indices);
    node->recompute = [idxs](Tensor::Node& self) {
        const auto& V = self.parents[0]->values;
        for (std::size_t i = 0; i < idxs.size(); ++i) self.values[i] = V[idxs[i]];
    };
    node->recompute(*node);
    node->backprop = [idxs](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < idxs.size(); ++i) p.grad[idxs[i]] += self.grad[i];
    };
    return Tensor(node);
}

/// arccos with inputs clamped to [−1, 1]; subgradient 0 at the clamp
/// boundary (keeps gradients finite for coincident vectors).
inline Tensor arccos_clamped(const Tensor& v) {
    auto node = detail::make_op_node("arccos_clamped", v.shape(), {v.node()});
    node->recompute = [](Tensor::Node& self) {
        const auto& V = self.parents[0]->values;
        for (std::size_t i = 0; i < self.size(); ++i)
            self.values[i] = std::acos(std::clamp(V[i], -1.0, 1.0));
    };
    node->recompute(*node);
    node->backprop = [](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        for (std::size_t i = 0; i < self.size(); ++i) {
            const double x = p.values[i];
            if (x > -1.0 && x < 1.0)
                p.grad[i] += self.grad[i] * (-1.0 / std::sqrt(1.0 - x * x));
        }
    };
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// backward pass and the computation record
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Tensor::NodePtr> topo_order(const Tensor::NodePtr& root) {
    std::vector<Tensor::NodePtr> order;
    std::unordered_set<const Tensor::Node*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Tensor::NodePtr, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto child = node->parents[next++];
            if (seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents precede children
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Zeroes every reachable gradient
/// accumulator first, then accumulates ∂loss/∂node for all participating
/// nodes. Tensors outside the differentiation set keep no grad at all.
inline void backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto order = detail::topo_order(loss.node());
    for (auto& n : order) {
        if (n->requires_grad) n->grad.assign(n->values.size(), 0.0);
    }
    if (!loss.node()->requires_grad) return;  // nothing participates
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& n = **it;
        if (n.requires_grad && n.backprop) n.backprop(n);
    }
}

/// Topologically ordered snapshot of the primitive operations reachable
/// from a root. Replaying forward recomputes every non-leaf node from its
/// parents, reproducing the original values exactly when leaves are
/// unchanged — and evaluating the recorded function when they are not.
struct ComputationRecord {
    std::vector<Tensor::NodePtr> nodes;  // parents precede children

    static ComputationRecord from(const Tensor& root) {
        return ComputationRecord{detail::topo_order(root.node())};
    }

    void replay_forward() {
        for (auto& n : nodes)
            if (n->recompute) n->recompute(*n);
    }

    std::vector<std::string> op_sequence() const {
        std::vector<std::string> ops;
        ops.reserve(nodes.size());
        for (const auto& n : nodes) ops.emplace_back(n->op);
        return ops;
    }
};

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

inline double fd_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

struct FiniteDifferenceReport {
    double max_rel_error = 0.0;
    std::size_t worst_coord = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Checks backward() against central finite differences for a scalar-valued
/// function that rebuilds its graph from x on every call. Returns the max
/// over coordinates of |a−n| / max(1e−8, |a|+|n|).
inline FiniteDifferenceReport finite_difference_check(
    const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps) {
    if (!(eps > 0.0)) throw ContractError("finite_difference_check: eps must be > 0");
    Tensor y0 = f(x);
    Tensor y1 = f(x);
    if (!y0.is_scalar()) throw ContractError("finite_difference_check: f must return a scalar");
    if (y0.item() != y1.item())
        throw ContractError("finite_difference_check: f is not deterministic");
    backward(y0);
    std::vector<double> analytic(x.size(), 0.0);
    if (x.has_grad())
        std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    FiniteDifferenceReport rep;
    auto& vals = x.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        vals[i] = keep + eps;
        const double fp = f(x).item();
        vals[i] = keep - eps;
        const double fm = f(x).item();
        vals[i] = keep;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = fd_relative_error(analytic[i], numeric);
        if (err >= rep.max_rel_error) {
            rep.max_rel_error = err;
            rep.worst_coord = i;
            rep.worst_analytic = analytic[i];
            rep.worst_numeric = numeric;
        }
    }
    return rep;
}

/// Record-replay variant: perturbs one leaf of an already-built graph and
/// replays forward to evaluate the recorded objective. backward(root) must
/// have been run beforehand so analytic gradients are populated.
inline FiniteDifferenceReport replay_difference_check(ComputationRecord& record,
                                                      const Tensor& root, Tensor& leaf,
                                                      double eps) {
    if (!(eps > 0.0)) throw ContractError("replay_difference_check: eps must be > 0");
    if (!root.is_scalar()) throw ContractError("replay_difference_check: root must be scalar");
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.has_grad())
        std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    FiniteDifferenceReport rep;
    auto& vals = leaf.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double keep = vals[i];
        vals[i] = keep + eps;
        record.replay_forward();
        const double fp = root.values()[0];
        vals[i] = keep - eps;
        record.replay_forward();
        const double fm = root.values()[0];
        vals[i] = keep;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = fd_relative_error(analytic[i], numeric);
        if (err >= rep.max_rel_error) {
            rep.max_rel_error = err;
            rep.worst_coord = i;
            rep.worst_analytic = analytic[i];
            rep.worst_numeric = numeric;
        }
    }
    record.replay_forward();  // restore original values
    return rep;
}

}  // namespace gcr
