#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gcr/errors.hpp"
#include "gcr/graphs.hpp"
#include "gcr/tensor.hpp"

namespace gcr {

// ---------------------------------------------------------------------------
// weighting schemes
// ---------------------------------------------------------------------------

enum class WeightingScheme { equal, linear, squared, sqrt, cosine, arccos, adaptive };

inline std::string scheme_name(WeightingScheme s) {
    switch (s) {
        case WeightingScheme::equal: return "equal";
        case WeightingScheme::linear: return "linear";
        case WeightingScheme::squared: return "squared";
        case WeightingScheme::sqrt: return "sqrt";
        case WeightingScheme::cosine: return "cosine";
        case WeightingScheme::arccos: return "arccos";
        case WeightingScheme::adaptive: return "adaptive";
    }
    return "?";
}

inline WeightingScheme parse_scheme(const std::string& s) {
    if (s == "equal") return WeightingScheme::equal;
    if (s == "linear") return WeightingScheme::linear;
    if (s == "squared") return WeightingScheme::squared;
    if (s == "sqrt") return WeightingScheme::sqrt;
    if (s == "cosine") return WeightingScheme::cosine;
    if (s == "arccos") return WeightingScheme::arccos;
    if (s == "adaptive") return WeightingScheme::adaptive;
    throw ConfigError("unknown weighting scheme '" + s + "'");
}

/// Depth-based weights for taps l = 1..K. The adaptive scheme has no closed
/// form and is rejected here.
inline std::vector<double> fixed_weights(WeightingScheme scheme, std::size_t K) {
    if (K < 1) throw ContractError("fixed_weights: K must be >= 1");
    if (scheme == WeightingScheme::adaptive)
        throw ContractError("fixed_weights: adaptive scheme has no fixed closed form");
    std::vector<double> w(K);
    const double kd = static_cast<double>(K);
    for (std::size_t l = 1; l <= K; ++l) {
        const double r = static_cast<double>(l) / kd;
        double v = 0.0;
        switch (scheme) {
            case WeightingScheme::equal: v = 1.0 / kd; break;
            case WeightingScheme::linear: v = r; break;
            case WeightingScheme::squared: v = r * r; break;
            case WeightingScheme::sqrt: v = std::sqrt(r); break;
            case WeightingScheme::cosine:
                v = (1.0 + std::cos(std::numbers::pi * r)) / 2.0;
                break;
            case WeightingScheme::arccos:
                v = std::acos(1.0 - 2.0 * r) / std::numbers::pi;
                break;
            case WeightingScheme::adaptive: break;  // unreachable
        }
        w[l - 1] = v;
    }
    return w;
}

/// w_l = exp(−loss_l) / Σ_j exp(−loss_j), max-shift stabilized. Weights are
/// constants of the current step; no gradient flows through them.
inline std::vector<double> adaptive_weights(const std::vector<double>& losses) {
    if (losses.empty()) throw ContractError("adaptive_weights: needs K >= 1 losses");
    for (double l : losses)
        if (!std::isfinite(l)) throw NumericError("adaptive_weights: non-finite loss");
    double m = -losses[0];
    for (double l : losses) m = std::max(m, -l);
    std::vector<double> w(losses.size());
    double z = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        w[i] = std::exp(-losses[i] - m);
        z += w[i];
    }
    for (double& x : w) x /= z;
    return w;
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

enum class TapPlacement { early, mid, late, early_mid, mid_late, early_late, full };

inline std::string placement_name(TapPlacement p) {
    switch (p) {
        case TapPlacement::early: return "early";
        case TapPlacement::mid: return "mid";
        case TapPlacement::late: return "late";
        case TapPlacement::early_mid: return "early+mid";
        case TapPlacement::mid_late: return "mid+late";
        case TapPlacement::early_late: return "early+late";
        case TapPlacement::full: return "full";
    }
    return "?";
}

inline TapPlacement parse_placement(const std::string& s) {
    if (s == "early") return TapPlacement::early;
    if (s == "mid") return TapPlacement::mid;
    if (s == "late") return TapPlacement::late;
    if (s == "early+mid") return TapPlacement::early_mid;
    if (s == "mid+late") return TapPlacement::mid_late;
    if (s == "early+late") return TapPlacement::early_late;
    if (s == "full") return TapPlacement::full;
    throw ConfigError("unknown placement '" + s + "'");
}

/// Everything that parameterizes the regularizer: where the GCLs sit, how
/// per-layer losses are weighted, which kernel builds the feature graphs,
/// the loss weight λ, and the optional anti-collapse penalty (τ, β).
struct GCRConfig {
    bool enabled = true;  // false = plain cross-entropy loop, no GCL machinery at all
    TapPlacement placement = TapPlacement::late;
    std::optional<std::vector<std::size_t>> explicit_taps;  // layer indices; overrides placement
    WeightingScheme scheme = WeightingScheme::adaptive;
    SimilarityKernel kernel;
    double lambda = 1.0;
    double tau = 0.0;   // radians
    double beta = 0.0;
    bool normalize_pairs = false;

    void validate() const {
        if (!(std::isfinite(lambda) && lambda >= 0.0)) throw ConfigError("gcr.lambda must be finite and >= 0");
        if (!(std::isfinite(tau) && tau >= 0.0)) throw ConfigError("gcr.tau must be finite and >= 0");
        if (!(std::isfinite(beta) && beta >= 0.0)) throw ConfigError("gcr.beta must be finite and >= 0");
        kernel.validate();
        if (explicit_taps) {
            if (explicit_taps->empty()) throw ConfigError("gcr.taps must be non-empty");
            for (std::size_t i = 1; i < explicit_taps->size(); ++i)
                if ((*explicit_taps)[i] <= (*explicit_taps)[i - 1])
                    throw ConfigError("gcr.taps must be strictly increasing in depth");
        }
    }
};

/// Per-tap alignment losses with the weights applied to them.
struct LayerLossBundle {
    std::vector<Tensor> losses;   // differentiable scalars
    std::vector<double> weights;  // non-negative; adaptive sums to 1
};

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

/// Σ_{i<j} (F_ij − P_ij)², optionally divided by the pair count.
/// Gradient flows through F only; P must be detached.
inline Tensor layer_alignment_loss(const SimilarityMatrix& f, const SimilarityMatrix& p,
                                   bool normalize_pairs = false) {
    if (f.n() != p.n())
        throw DimensionError("layer_alignment_loss: size mismatch " + std::to_string(f.n()) +
                             " vs " + std::to_string(p.n()));
    if (p.differentiable)
        throw ContractError("layer_alignment_loss: P must be detached from the gradient record");
    Tensor fu = triu_vec(f.mat);
    Tensor pu = triu_vec(p.mat);
    Tensor diff = sub(fu, pu);
    Tensor loss = sum(hadamard(diff, diff));
    if (normalize_pairs) {
        const std::size_t n = f.n();
        loss = scale(loss, 2.0 / static_cast<double>(n * (n - 1)));
    }
    return loss;
}

/// Σ_l w_l · loss_l. Weights are plain constants; gradient flows through
/// the losses only.
inline Tensor gcr_total(const LayerLossBundle& bundle) {
    if (bundle.losses.size() != bundle.weights.size())
        throw ContractError("gcr_total: " + std::to_string(bundle.losses.size()) + " losses vs " +
                            std::to_string(bundle.weights.size()) + " weights");
    if (bundle.losses.empty()) throw ContractError("gcr_total: empty bundle");
    Tensor acc = scale(bundle.losses[0], bundle.weights[0]);
    for (std::size_t i = 1; i < bundle.losses.size(); ++i)
        acc = add(acc, scale(bundle.losses[i], bundle.weights[i]));
    return acc;
}

/// ce + λ·gcr. At λ = 0 the cross-entropy tensor is returned as-is, so the
/// GCR path contributes nothing — not even a zero — to the gradient.
inline Tensor total_loss(const Tensor& ce, const Tensor& gcr, double lambda) {
    if (!(lambda >= 0.0)) throw ContractError("total_loss: lambda must be >= 0");
    if (lambda == 0.0) return ce;
    return add(ce, scale(gcr, lambda));
}

/// Batch-mean cross entropy computed in log-space.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    return nll_mean(log_softmax_rows(logits), labels);
}

/// Soft floor on within-class feature angles:
///   β · (1/ζ) · Σ_{same-class i<j, θ_ij < τ} (θ_ij − τ)²,
/// θ = arccos of the ReLU-clamped cosine, ζ = same-class pair count.
/// Returns a detached zero when τ = 0 or no same-class pair exists.
inline Tensor anti_collapse_penalty(const Tensor& features, const std::vector<int>& labels,
                                    double tau, double beta) {
    if (!(tau >= 0.0) || !(beta >= 0.0))
        throw ContractError("anti_collapse_penalty: tau and beta must be >= 0");
    if (features.rank() != 2) throw DimensionError("anti_collapse_penalty: expects [n x d]");
    const std::size_t n = features.dim(0);
    if (labels.size() != n)
        throw ContractError("anti_collapse_penalty: label count mismatch");
    if (tau == 0.0 || beta == 0.0 || n < 2) return Tensor::scalar(0.0);

    std::size_t same_class_pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (labels[i] == labels[j]) ++same_class_pairs;
    if (same_class_pairs == 0) return Tensor::scalar(0.0);

    Tensor graph = relu_cosine_graph(features);  // raises on zero-norm rows
    Tensor upper = triu_vec(graph);

    // select same-class pairs currently below the angle floor; the selection
    // is a constant of this record
    std::vector<std::size_t> selected;
    {
        const auto uv = upper.values();
        std::size_t p = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j, ++p) {
                if (labels[i] != labels[j]) continue;
                const double angle = std::acos(std::clamp(uv[p], -1.0, 1.0));
                if (angle < tau) selected.push_back(p);
            }
    }
    if (selected.empty()) return Tensor::scalar(0.0);

    Tensor picked = gather(upper, std::move(selected));
    Tensor angles = arccos_clamped(picked);
    Tensor shifted = sub(angles, Tensor::full(angles.shape(), tau));
    Tensor sq = hadamard(shifted, shifted);
    return scale(sum(sq), beta / static_cast<double>(same_class_pairs));
}

}  // namespace gcr
