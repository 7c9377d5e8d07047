#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcr/errors.hpp"
#include "gcr/loss.hpp"
#include "gcr/random.hpp"
#include "gcr/tensor.hpp"

namespace gcr {

// ---------------------------------------------------------------------------
// network specification
// ---------------------------------------------------------------------------

enum class LayerKind { dense, conv, maxpool, relu, flatten };

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    // dense
    std::size_t in = 0;   // 0 = infer from the previous layer
    std::size_t out = 0;
    // conv
    std::size_t out_channels = 0;
    std::size_t kh = 0, kw = 0;
    Padding padding = Padding::valid;
    // maxpool
    std::size_t window = 2;

    static LayerSpec dense(std::size_t out, std::size_t in = 0) {
        LayerSpec l;
        l.kind = LayerKind::dense;
        l.out = out;
        l.in = in;
        return l;
    }
    static LayerSpec conv(std::size_t out_channels, std::size_t kh, std::size_t kw,
                          Padding pad = Padding::valid) {
        LayerSpec l;
        l.kind = LayerKind::conv;
        l.out_channels = out_channels;
        l.kh = kh;
        l.kw = kw;
        l.padding = pad;
        return l;
    }
    static LayerSpec maxpool(std::size_t window = 2) {
        LayerSpec l;
        l.kind = LayerKind::maxpool;
        l.window = window;
        return l;
    }
    static LayerSpec relu() {
        LayerSpec l;
        l.kind = LayerKind::relu;
        return l;
    }
    static LayerSpec flatten() {
        LayerSpec l;
        l.kind = LayerKind::flatten;
        return l;
    }
};

struct NetworkSpec {
    Shape input_shape;  // per-sample shape: {d} for vectors, {c,h,w} for images
    std::vector<LayerSpec> layers;
    std::size_t classes = 0;
};

/// Plain MLP: widths = {in, h1, …, out}; ReLU between dense layers.
inline NetworkSpec mlp_spec(const std::vector<std::size_t>& widths) {
    if (widths.size() < 2) throw SpecificationError("mlp_spec: need at least input and output widths");
    NetworkSpec spec;
    spec.input_shape = {widths.front()};
    spec.classes = widths.back();
    for (std::size_t i = 1; i < widths.size(); ++i) {
        spec.layers.push_back(LayerSpec::dense(widths[i], widths[i - 1]));
        if (i + 1 < widths.size()) spec.layers.push_back(LayerSpec::relu());
    }
    return spec;
}

// ---------------------------------------------------------------------------
// network instance
// ---------------------------------------------------------------------------

/// A built network: validated shapes, initialized parameters, forward pass
/// with read-only tap points after any dense/conv layer except the final
/// classifier (whose output is the logits the prediction graph consumes).
class Network {
public:
    Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
        validate_and_index();
        init_params(seed);
    }

    const NetworkSpec& spec() const { return spec_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t classes() const { return spec_.classes; }

    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<Tensor>& parameters() const { return params_; }

    /// Indices (into spec().layers) eligible to host a GCL. Dense/conv
    /// outputs qualify, except the final logits-producing layer.
    const std::vector<std::size_t>& tap_eligible_layers() const { return eligible_; }

    std::size_t parameter_count() const {
        std::size_t s = 0;
        for (const auto& p : params_) s += p.size();
        return s;
    }

    struct ForwardResult {
        Tensor logits;               // [n, C]
        std::vector<Tensor> tapped;  // per tap, flattened to [n, d_l]
    };

    /// Runs the batch through the network, collecting flattened copies of
    /// the requested layer outputs. Taps are pure observation points; the
    /// logits are bitwise independent of which taps are requested.
    ForwardResult forward_with_taps(const Tensor& batch,
                                    const std::vector<std::size_t>& taps) const {
        for (std::size_t t : taps) {
            bool ok = false;
            for (std::size_t e : eligible_)
                if (e == t) ok = true;
            if (!ok)
                throw ContractError("forward_with_taps: layer " + std::to_string(t) +
                                    " is not tap-eligible");
        }
        Shape expected = spec_.input_shape;
        expected.insert(expected.begin(), batch.dim(0));
        if (batch.shape() != expected)
            throw DimensionError("forward_with_taps: batch shape " + shape_str(batch.shape()) +
                                 " does not match input " + shape_str(expected));

        const std::size_t n = batch.dim(0);
        Tensor cur = batch;
        ForwardResult result;
        result.tapped.resize(taps.size());
        std::size_t param_idx = 0;
        for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
            const auto& layer = spec_.layers[li];
            switch (layer.kind) {
                case LayerKind::dense: {
                    const Tensor& w = params_[param_idx++];
                    const Tensor& b = params_[param_idx++];
                    cur = add_row_bias(matmul(cur, w), b);
                    break;
                }
                case LayerKind::conv: {
                    const Tensor& k = params_[param_idx++];
                    const Tensor& b = params_[param_idx++];
                    cur = add_channel_bias(conv2d(cur, k, layer.padding), b);
                    break;
                }
                case LayerKind::maxpool: cur = maxpool2d(cur, layer.window); break;
                case LayerKind::relu: cur = relu(cur); break;
                case LayerKind::flatten: {
                    cur = reshape(cur, {n, cur.size() / n});
                    break;
                }
            }
            for (std::size_t t = 0; t < taps.size(); ++t)
                if (taps[t] == li)
                    result.tapped[t] = cur.rank() == 2 ? cur : reshape(cur, {n, cur.size() / n});
        }
        result.logits = cur;
        return result;
    }

    Tensor forward(const Tensor& batch) const { return forward_with_taps(batch, {}).logits; }

    /// Replaces parameter values (e.g. from a checkpoint). Count and shapes
    /// must match the built network.
    void load_parameter_values(const std::vector<std::vector<double>>& values) {
        if (values.size() != params_.size())
            throw SpecificationError("load_parameter_values: parameter count mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (values[i].size() != params_[i].size())
                throw SpecificationError("load_parameter_values: size mismatch at parameter " +
                                         std::to_string(i));
            params_[i].values_mut() = values[i];
        }
    }

private:
    void validate_and_index() {
        if (spec_.layers.empty()) throw SpecificationError("network has no layers");
        if (spec_.classes < 2) throw SpecificationError("network needs >= 2 classes");

        Shape shape = spec_.input_shape;  // per-sample shape
        std::size_t last_param_layer = spec_.layers.size();
        for (std::size_t li = spec_.layers.size(); li-- > 0;) {
            const auto k = spec_.layers[li].kind;
            if (k == LayerKind::dense || k == LayerKind::conv) {
                last_param_layer = li;
                break;
            }
        }
        if (last_param_layer == spec_.layers.size())
            throw SpecificationError("network has no parametrized layers");

        for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
            auto& layer = spec_.layers[li];
            const std::string where = "layer " + std::to_string(li);
            switch (layer.kind) {
                case LayerKind::dense: {
                    if (shape.size() != 1)
                        throw SpecificationError(where + ": dense expects flat input, got " +
                                                 shape_str(shape) + " (insert flatten)");
                    if (layer.in == 0) layer.in = shape[0];
                    if (layer.in != shape[0])
                        throw SpecificationError(
                            where + ": dense input " + std::to_string(layer.in) +
                            " does not match " + shape_str(shape) + " produced by " +
                            (li == 0 ? std::string("the network input")
                                     : "layer " + std::to_string(li - 1)));
                    if (layer.out == 0) throw SpecificationError(where + ": dense output is 0");
                    shape = {layer.out};
                    break;
                }
                case LayerKind::conv: {
                    if (shape.size() != 3)
                        throw SpecificationError(where + ": conv expects [c,h,w] input, got " +
                                                 shape_str(shape));
                    const std::size_t h = shape[1], w = shape[2];
                    if (layer.padding == Padding::valid && (layer.kh > h || layer.kw > w))
                        throw SpecificationError(where + ": kernel " + std::to_string(layer.kh) +
                                                 "x" + std::to_string(layer.kw) +
                                                 " does not fit input " + shape_str(shape));
                    const std::size_t oh = layer.padding == Padding::same ? h : h - layer.kh + 1;
                    const std::size_t ow = layer.padding == Padding::same ? w : w - layer.kw + 1;
                    shape = {layer.out_channels, oh, ow};
                    break;
                }
                case LayerKind::maxpool: {
                    if (shape.size() != 3)
                        throw SpecificationError(where + ": maxpool expects [c,h,w] input, got " +
                                                 shape_str(shape));
                    if (shape[1] < layer.window || shape[2] < layer.window)
                        throw SpecificationError(where + ": pool window does not fit " +
                                                 shape_str(shape));
                    shape = {shape[0], shape[1] / layer.window, shape[2] / layer.window};
                    break;
                }
                case LayerKind::relu: break;
                case LayerKind::flatten: {
                    shape = {numel(shape)};
                    break;
                }
            }
            const bool parametrized =
                layer.kind == LayerKind::dense || layer.kind == LayerKind::conv;
            if (parametrized && li != last_param_layer) eligible_.push_back(li);
        }
        if (shape.size() != 1 || shape[0] != spec_.classes)
            throw SpecificationError("network output " + shape_str(shape) + " does not produce " +
                                     std::to_string(spec_.classes) + " logits");
        if (eligible_.empty())
            throw SpecificationError("network has no tap-eligible layer");
    }

    void init_params(std::uint64_t seed) {
        RandomStream rng(mix_seed(seed, 0x1417));
        Shape shape = spec_.input_shape;
        for (auto& layer : spec_.layers) {
            switch (layer.kind) {
                case LayerKind::dense: {
                    const double limit =
                        std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
                    std::vector<double> w(layer.in * layer.out);
                    for (double& x : w) x = rng.uniform(-limit, limit);
                    params_.push_back(Tensor::from({layer.in, layer.out}, std::move(w), true));
                    params_.push_back(Tensor::zeros({layer.out}, true));
                    shape = {layer.out};
                    break;
                }
                case LayerKind::conv: {
                    const std::size_t c = shape[0];
                    const std::size_t fan_in = c * layer.kh * layer.kw;
                    const std::size_t fan_out = layer.out_channels * layer.kh * layer.kw;
                    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
                    std::vector<double> k(layer.out_channels * c * layer.kh * layer.kw);
                    for (double& x : k) x = rng.uniform(-limit, limit);
                    params_.push_back(
                        Tensor::from({layer.out_channels, c, layer.kh, layer.kw}, std::move(k), true));
                    params_.push_back(Tensor::zeros({layer.out_channels}, true));
                    const std::size_t h = shape[1], w2 = shape[2];
                    const std::size_t oh = layer.padding == Padding::same ? h : h - layer.kh + 1;
                    const std::size_t ow = layer.padding == Padding::same ? w2 : w2 - layer.kw + 1;
                    shape = {layer.out_channels, oh, ow};
                    break;
                }
                case LayerKind::maxpool:
                    shape = {shape[0], shape[1] / layer.window, shape[2] / layer.window};
                    break;
                case LayerKind::relu: break;
                case LayerKind::flatten: shape = {numel(shape)}; break;
            }
        }
    }

    NetworkSpec spec_;
    std::uint64_t seed_;
    std::vector<Tensor> params_;
    std::vector<std::size_t> eligible_;
};

// ---------------------------------------------------------------------------
// tap placement resolution
// ---------------------------------------------------------------------------

/// Splits the tap-eligible layers into three contiguous depth bands of
/// as-equal-as-possible size (remainder to earlier bands) and picks the
/// deepest layer of the requested band(s); `full` takes every eligible
/// layer. Falls back to the nearest distinct layers when there are fewer
/// eligible layers than bands.
inline std::vector<std::size_t> resolve_taps(const std::vector<std::size_t>& eligible,
                                             TapPlacement placement) {
    if (eligible.empty())
        throw SpecificationError("resolve_taps: network has no tap-eligible layer");
    const std::size_t k = eligible.size();
    if (placement == TapPlacement::full) return eligible;

    // band b (0..2) covers sizes floor(k/3) + (b < k%3)
    std::size_t sizes[3];
    for (std::size_t b = 0; b < 3; ++b) sizes[b] = k / 3 + (b < k % 3 ? 1 : 0);
    std::size_t ends[3];
    std::size_t acc = 0;
    for (std::size_t b = 0; b < 3; ++b) {
        acc += sizes[b];
        ends[b] = acc;  // one past the last element of band b
    }
    auto representative = [&](std::size_t band) -> std::size_t {
        if (sizes[band] > 0) return eligible[ends[band] - 1];
        // fewer eligible layers than bands: nearest distinct layer
        return eligible[std::min(band, k - 1)];
    };

    std::vector<std::size_t> taps;
    auto add_band = [&](std::size_t band) {
        const std::size_t idx = representative(band);
        for (std::size_t t : taps)
            if (t == idx) return;
        taps.push_back(idx);
    };
    switch (placement) {
        case TapPlacement::early: add_band(0); break;
        case TapPlacement::mid: add_band(1); break;
        case TapPlacement::late: add_band(2); break;
        case TapPlacement::early_mid: add_band(0); add_band(1); break;
        case TapPlacement::mid_late: add_band(1); add_band(2); break;
        case TapPlacement::early_late: add_band(0); add_band(2); break;
        case TapPlacement::full: break;  // handled above
    }
    std::sort(taps.begin(), taps.end());
    return taps;
}

inline std::vector<std::size_t> resolve_taps(const Network& net, TapPlacement placement) {
    return resolve_taps(net.tap_eligible_layers(), placement);
}

inline std::vector<std::size_t> resolve_taps(const Network& net, const GCRConfig& cfg) {
    if (cfg.explicit_taps) {
        for (std::size_t t : *cfg.explicit_taps) {
            bool ok = false;
            for (std::size_t e : net.tap_eligible_layers())
                if (e == t) ok = true;
            if (!ok)
                throw ConfigError("gcr.taps: layer " + std::to_string(t) + " is not tap-eligible");
        }
        return *cfg.explicit_taps;
    }
    return resolve_taps(net, cfg.placement);
}

}  // namespace gcr
