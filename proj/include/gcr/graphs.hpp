#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcr/errors.hpp"
#include "gcr/tensor.hpp"

namespace gcr {

// ---------------------------------------------------------------------------
// similarity kernels
// ---------------------------------------------------------------------------

/// Pairwise similarity kernel. Cosine is the default and is
/// hyperparameter-free; the others are normalized/clamped into [0,1] so they
/// are commensurate with the masked prediction graph.
struct SimilarityKernel {
    enum class Kind { cosine, rbf, polynomial, sigmoid, laplacian };

    Kind kind = Kind::cosine;
    std::optional<double> gamma;   // rbf, laplacian; default 1/d
    std::optional<int> degree;     // polynomial; default 2
    std::optional<double> offset;  // polynomial (default 1), sigmoid (default 0)
    std::optional<double> scale;   // sigmoid; default 1

    static SimilarityKernel cosine() { return {}; }
    static SimilarityKernel rbf(std::optional<double> g = std::nullopt) {
        SimilarityKernel k;
        k.kind = Kind::rbf;
        k.gamma = g;
        return k;
    }
    static SimilarityKernel laplacian(std::optional<double> g = std::nullopt) {
        SimilarityKernel k;
        k.kind = Kind::laplacian;
        k.gamma = g;
        return k;
    }
    static SimilarityKernel polynomial(int deg = 2, double off = 1.0) {
        SimilarityKernel k;
        k.kind = Kind::polynomial;
        k.degree = deg;
        k.offset = off;
        return k;
    }
    static SimilarityKernel sigmoid(double sc = 1.0, double off = 0.0) {
        SimilarityKernel k;
        k.kind = Kind::sigmoid;
        k.scale = sc;
        k.offset = off;
        return k;
    }

    void validate() const {
        if (kind == Kind::cosine) {
            if (gamma || degree || offset || scale)
                throw ConfigError("cosine kernel takes no hyperparameters");
            return;
        }
        if ((kind == Kind::rbf || kind == Kind::laplacian) && gamma && !(*gamma > 0.0))
            throw ConfigError("kernel gamma must be > 0");
        if (kind == Kind::polynomial && degree && *degree < 1)
            throw ConfigError("polynomial degree must be >= 1");
    }

    double resolved_gamma(std::size_t d) const {
        return gamma.value_or(1.0 / static_cast<double>(d));
    }
    int resolved_degree() const { return degree.value_or(2); }
    double resolved_offset() const {
        return offset.value_or(kind == Kind::polynomial ? 1.0 : 0.0);
    }
    double resolved_scale() const { return scale.value_or(1.0); }

    std::string name() const {
        switch (kind) {
            case Kind::cosine: return "cosine";
            case Kind::rbf: return "rbf";
            case Kind::polynomial: return "polynomial";
            case Kind::sigmoid: return "sigmoid";
            case Kind::laplacian: return "laplacian";
        }
        return "?";
    }

    static SimilarityKernel parse(const std::string& s) {
        SimilarityKernel k;
        if (s == "cosine") k.kind = Kind::cosine;
        else if (s == "rbf") k.kind = Kind::rbf;
        else if (s == "polynomial") k.kind = Kind::polynomial;
        else if (s == "sigmoid") k.kind = Kind::sigmoid;
        else if (s == "laplacian") k.kind = Kind::laplacian;
        else throw ConfigError("unknown kernel '" + s + "'");
        return k;
    }
};

/// Scalar kernel evaluation between two equal-length vectors.
inline double kernel_similarity(std::span<const double> u, std::span<const double> v,
                                const SimilarityKernel& kernel) {
    if (u.size() != v.size())
        throw DimensionError("kernel_similarity: dimension mismatch " +
                             std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    kernel.validate();
    const std::size_t d = u.size();
    switch (kernel.kind) {
        case SimilarityKernel::Kind::cosine: {
            double uu = 0.0, vv = 0.0, uv = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                uu += u[t] * u[t];
                vv += v[t] * v[t];
                uv += u[t] * v[t];
            }
            if (uu == 0.0 || vv == 0.0)
                throw DegenerateInputError("kernel_similarity: zero-norm vector under cosine");
            return std::max(0.0, uv / (std::sqrt(uu) * std::sqrt(vv)));
        }
        case SimilarityKernel::Kind::rbf: {
            double d2 = 0.0;
            for (std::size_t t = 0; t < d; ++t) d2 += (u[t] - v[t]) * (u[t] - v[t]);
            return std::exp(-kernel.resolved_gamma(d) * d2);
        }
        case SimilarityKernel::Kind::laplacian: {
            double d1 = 0.0;
            for (std::size_t t = 0; t < d; ++t) d1 += std::abs(u[t] - v[t]);
            return std::exp(-kernel.resolved_gamma(d) * d1);
        }
        case SimilarityKernel::Kind::polynomial: {
            double uv = 0.0;
            for (std::size_t t = 0; t < d; ++t) uv += u[t] * v[t];
            const double base = uv / static_cast<double>(d) + kernel.resolved_offset();
            const double val = std::pow(base, kernel.resolved_degree());
            return std::clamp(val, 0.0, 1.0);
        }
        case SimilarityKernel::Kind::sigmoid: {
            double uv = 0.0;
            for (std::size_t t = 0; t < d; ++t) uv += u[t] * v[t];
            const double val =
                std::tanh(kernel.resolved_scale() * uv / static_cast<double>(d) +
                          kernel.resolved_offset());
            return std::clamp(val, 0.0, 1.0);
        }
    }
    throw ContractError("kernel_similarity: unreachable");
}

// ---------------------------------------------------------------------------
// graph types
// ---------------------------------------------------------------------------

/// Batch-level n×n similarity graph. Symmetric, non-negative for the cosine
/// kernel; the diagonal is stored but never consumed downstream.
struct SimilarityMatrix {
    Tensor mat;          // [n, n]
    bool differentiable = false;

    std::size_t n() const { return mat.dim(0); }
    double at(std::size_t i, std::size_t j) const { return mat.values()[i * n() + j]; }
};

/// Binary same-label indicator over a batch; diagonal all ones.
struct ClassMask {
    std::size_t n = 0;
    std::vector<std::uint8_t> bits;  // row-major n×n

    std::uint8_t at(std::size_t i, std::size_t j) const { return bits[i * n + j]; }
};

// ---------------------------------------------------------------------------
// graph construction primitives
// ---------------------------------------------------------------------------

/// G[i,j] = max(0, cos(x_i, x_j)) for x[n,d]; each unordered pair computed
/// once and mirrored, diagonal stored as 1. Differentiable in x.
inline Tensor relu_cosine_graph(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("relu_cosine_graph: expects [n x d]");
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (n < 2) throw DegenerateInputError("relu_cosine_graph: batch size must be >= 2");

    auto compute_norms = [n, d](const std::vector<double>& X, std::vector<double>& norms) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) s += X[i * d + t] * X[i * d + t];
            if (s == 0.0)
                throw DegenerateInputError("relu_cosine_graph: zero-norm feature row " +
                                           std::to_string(i));
            norms[i] = std::sqrt(s);
        }
    };

    auto node = detail::make_op_node("relu_cosine_graph", {n, n}, {x.node()});
    node->recompute = [n, d, compute_norms](Tensor::Node& self) {
        const auto& X = self.parents[0]->values;
        std::vector<double> norms(n);
        compute_norms(X, norms);
        for (std::size_t i = 0; i < n; ++i) {
            self.values[i * n + i] = 1.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                double dot = 0.0;
                for (std::size_t t = 0; t < d; ++t) dot += X[i * d + t] * X[j * d + t];
                const double c = dot / (norms[i] * norms[j]);
                const double v = c > 0.0 ? c : 0.0;
                self.values[i * n + j] = v;
                self.values[j * n + i] = v;
            }
        }
    };
    node->recompute(*node);
    node->backprop = [n, d, compute_norms](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        const auto& X = p.values;
        std::vector<double> norms(n);
        compute_norms(X, norms);
        std::vector<double> xn(n * d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t t = 0; t < d; ++t) xn[i * d + t] = X[i * d + t] / norms[i];
        std::vector<double> dxn(n * d, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double c = 0.0;
                for (std::size_t t = 0; t < d; ++t) c += xn[i * d + t] * xn[j * d + t];
                if (c <= 0.0) continue;  // ReLU clamp; subgradient at 0 is 0
                const double up = self.grad[i * n + j] + self.grad[j * n + i];
                if (up == 0.0) continue;
                for (std::size_t t = 0; t < d; ++t) {
                    dxn[i * d + t] += up * xn[j * d + t];
                    dxn[j * d + t] += up * xn[i * d + t];
                }
            }
        // pull back through row normalization: dx = (dxn − xn·⟨dxn, xn⟩)/‖x‖
        for (std::size_t i = 0; i < n; ++i) {
            double proj = 0.0;
            for (std::size_t t = 0; t < d; ++t) proj += dxn[i * d + t] * xn[i * d + t];
            for (std::size_t t = 0; t < d; ++t)
                p.grad[i * d + t] += (dxn[i * d + t] - xn[i * d + t] * proj) / norms[i];
        }
    };
    return Tensor(node);
}

/// Pairwise kernel graph for the non-cosine kernels of the closed set.
/// Values clamped into [0,1]; clamped entries carry zero subgradient.
inline Tensor kernel_graph(const Tensor& x, const SimilarityKernel& kernel) {
    if (x.rank() != 2) throw DimensionError("kernel_graph: expects [n x d]");
    kernel.validate();
    if (kernel.kind == SimilarityKernel::Kind::cosine) return relu_cosine_graph(x);
    const std::size_t n = x.dim(0), d = x.dim(1);
    if (n < 2) throw DegenerateInputError("kernel_graph: batch size must be >= 2");

    auto node = detail::make_op_node("kernel_graph", {n, n}, {x.node()});
    // diagonal stored as the structural constant 1 (never consumed downstream)
    node->recompute = [n, d, kernel](Tensor::Node& self) {
        const auto& X = self.parents[0]->values;
        for (std::size_t i = 0; i < n; ++i) {
            self.values[i * n + i] = 1.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double v = kernel_similarity({&X[i * d], d}, {&X[j * d], d}, kernel);
                self.values[i * n + j] = v;
                self.values[j * n + i] = v;
            }
        }
    };
    node->recompute(*node);
    node->backprop = [n, d, kernel](Tensor::Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        detail::ensure_grad(p);
        const auto& X = p.values;
        const double dn = static_cast<double>(d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double up = self.grad[i * n + j] + self.grad[j * n + i];
                if (up == 0.0) continue;
                const double* u = &X[i * d];
                const double* v = &X[j * d];
                switch (kernel.kind) {
                    case SimilarityKernel::Kind::rbf: {
                        const double g = kernel.resolved_gamma(d);
                        double d2 = 0.0;
                        for (std::size_t t = 0; t < d; ++t) d2 += (u[t] - v[t]) * (u[t] - v[t]);
                        const double k = std::exp(-g * d2);
                        for (std::size_t t = 0; t < d; ++t) {
                            const double coeff = up * k * (-2.0 * g) * (u[t] - v[t]);
                            p.grad[i * d + t] += coeff;
                            p.grad[j * d + t] -= coeff;
                        }
                        break;
                    }
                    case SimilarityKernel::Kind::laplacian: {
                        const double g = kernel.resolved_gamma(d);
                        double d1 = 0.0;
                        for (std::size_t t = 0; t < d; ++t) d1 += std::abs(u[t] - v[t]);
                        const double k = std::exp(-g * d1);
                        for (std::size_t t = 0; t < d; ++t) {
                            const double diff = u[t] - v[t];
                            if (diff == 0.0) continue;  // subgradient 0 at the kink
                            const double s = diff > 0.0 ? 1.0 : -1.0;
                            p.grad[i * d + t] += up * k * (-g) * s;
                            p.grad[j * d + t] -= up * k * (-g) * s;
                        }
                        break;
                    }
                    case SimilarityKernel::Kind::polynomial: {
                        double uv = 0.0;
                        for (std::size_t t = 0; t < d; ++t) uv += u[t] * v[t];
                        const double base = uv / dn + kernel.resolved_offset();
                        const int deg = kernel.resolved_degree();
                        const double val = std::pow(base, deg);
                        if (val <= 0.0 || val >= 1.0) break;  // clamped; zero subgradient
                        const double dbase = static_cast<double>(deg) * std::pow(base, deg - 1) / dn;
                        for (std::size_t t = 0; t < d; ++t) {
                            p.grad[i * d + t] += up * dbase * v[t];
                            p.grad[j * d + t] += up * dbase * u[t];
                        }
                        break;
                    }
                    case SimilarityKernel::Kind::sigmoid: {
                        double uv = 0.0;
                        for (std::size_t t = 0; t < d; ++t) uv += u[t] * v[t];
                        const double a =
                            kernel.resolved_scale() * uv / dn + kernel.resolved_offset();
                        const double th = std::tanh(a);
                        if (th <= 0.0 || th >= 1.0) break;  // clamped; zero subgradient
                        const double da = (1.0 - th * th) * kernel.resolved_scale() / dn;
                        for (std::size_t t = 0; t < d; ++t) {
                            p.grad[i * d + t] += up * da * v[t];
                            p.grad[j * d + t] += up * da * u[t];
                        }
                        break;
                    }
                    default: break;
                }
            }
        // diagonal entries are structural; no gradient flows through them
    };
    return Tensor(node);
}

// ---------------------------------------------------------------------------
// spec-level graph operations
// ---------------------------------------------------------------------------

/// Feature relational graph of a batch of flattened activations.
/// Differentiable: gradients flow to X.
inline SimilarityMatrix feature_graph(const Tensor& x, const SimilarityKernel& kernel) {
    Tensor g = kernel.kind == SimilarityKernel::Kind::cosine ? relu_cosine_graph(x)
                                                             : kernel_graph(x, kernel);
    return SimilarityMatrix{std::move(g), x.requires_grad()};
}

inline SimilarityMatrix feature_graph(const Tensor& x) {
    return feature_graph(x, SimilarityKernel::cosine());
}

/// Prediction relational graph S[i,j] = max(0, cos(softmax(z_i), softmax(z_j))).
/// A reference structure: the result is excluded from the gradient record.
inline SimilarityMatrix prediction_graph(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("prediction_graph: expects [n x C]");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    if (n < 2) throw DegenerateInputError("prediction_graph: batch size must be >= 2");
    if (c < 2) throw ContractError("prediction_graph: needs C >= 2 classes");
    detail::check_finite(logits.values(), "prediction_graph");

    const auto& z = logits.values();
    std::vector<double> probs(n * c);
    for (std::size_t i = 0; i < n; ++i) detail::softmax_row(&z[i * c], c, &probs[i * c]);

    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t t = 0; t < c; ++t) s += probs[i * c + t] * probs[i * c + t];
        norms[i] = std::sqrt(s);  // > 0, rows sum to 1
    }
    std::vector<double> g(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        g[i * n + i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t t = 0; t < c; ++t) dot += probs[i * c + t] * probs[j * c + t];
            const double v = std::max(0.0, dot / (norms[i] * norms[j]));
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    return SimilarityMatrix{Tensor::from({n, n}, std::move(g), false), false};
}

/// M[i,j] = 1 iff labels match; diagonal all ones.
inline ClassMask class_mask(const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    if (n < 1) throw ContractError("class_mask: empty label list");
    ClassMask m;
    m.n = n;
    m.bits.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            m.bits[i * n + j] = labels[i] == labels[j] ? 1 : 0;
    return m;
}

/// P = M ⊙ S. Inter-class entries are exactly zero. Detached like S.
inline SimilarityMatrix masked_prediction_graph(const SimilarityMatrix& s, const ClassMask& m) {
    if (s.n() != m.n)
        throw DimensionError("masked_prediction_graph: size mismatch " +
                             std::to_string(s.n()) + " vs " + std::to_string(m.n));
    const std::size_t n = s.n();
    std::vector<double> p(n * n, 0.0);
    const auto sv = s.mat.values();
    for (std::size_t i = 0; i < n * n; ++i) p[i] = m.bits[i] ? sv[i] : 0.0;
    return SimilarityMatrix{Tensor::from({n, n}, std::move(p), false), false};
}

/// Strictly-upper entries of a graph in row-major pair order.
inline std::vector<double> strict_upper(const SimilarityMatrix& a) {
    const std::size_t n = a.n();
    if (n < 2) throw DegenerateInputError("strict_upper: batch size must be >= 2");
    std::vector<double> out;
    out.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) out.push_back(a.at(i, j));
    return out;
}

}  // namespace gcr
