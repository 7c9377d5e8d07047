#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gcr/data.hpp"
#include "gcr/errors.hpp"
#include "gcr/graphs.hpp"
#include "gcr/loss.hpp"
#include "gcr/model.hpp"
#include "gcr/random.hpp"
#include "gcr/tensor.hpp"

namespace gcr {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t epochs = 50;
    double base_lr = 0.1;
    double decay_factor = 5.0;
    std::vector<std::size_t> decay_epochs = {20, 35, 45};
    double momentum = 0.9;
    double weight_decay = 5e-4;
    BatchPlan batch;
    GCRConfig gcr;
    std::uint64_t seed = 1;

    // test instrumentation; off by default
    bool snapshot_params = false;
    bool capture_first_batch = false;

    void validate() const {
        if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
        if (!(base_lr > 0.0)) throw ConfigError("train.base_lr must be > 0");
        if (!(decay_factor > 0.0)) throw ConfigError("train.decay_factor must be > 0");
        for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
            if (decay_epochs[i] >= epochs)
                throw ConfigError("train.decay_epochs must lie within [0, epochs)");
            if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
                throw ConfigError("train.decay_epochs must be strictly increasing");
        }
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("train.momentum must be in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
        batch.validate();
        gcr.validate();
    }

    /// 200-epoch recipe: lr 0.1 decayed by 5 at 60/120/160, batch 128,
    /// Nesterov momentum 0.9, weight decay 5e-4.
    static TrainConfig paper_preset() {
        TrainConfig c;
        c.epochs = 200;
        c.decay_epochs = {60, 120, 160};
        return c;
    }

    /// Same schedule shape compressed to 50 epochs (decay at 20/35/45).
    static TrainConfig desk_preset() { return TrainConfig{}; }
};

/// base_lr / decay_factor^(number of decay epochs <= epoch).
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    std::size_t hits = 0;
    for (std::size_t e : cfg.decay_epochs)
        if (e <= epoch) ++hits;
    double lr = cfg.base_lr;
    for (std::size_t i = 0; i < hits; ++i) lr /= cfg.decay_factor;
    return lr;
}

// ---------------------------------------------------------------------------
// SGD with Nesterov momentum
// ---------------------------------------------------------------------------

/// g ← grad + wd·param; v ← momentum·v + g; param ← param − lr·(g + momentum·v)
inline void sgd_step(std::vector<double>& param, std::span<const double> grad,
                     std::vector<double>& velocity, double lr, double momentum,
                     double weight_decay) {
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw DimensionError("sgd_step: param/grad/state size mismatch");
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (!std::isfinite(grad[i]))
            throw DivergenceError("sgd_step: non-finite gradient at coordinate " +
                                  std::to_string(i));
        const double g = grad[i] + weight_decay * param[i];
        velocity[i] = momentum * velocity[i] + g;
        param[i] -= lr * (g + momentum * velocity[i]);
    }
}

// ---------------------------------------------------------------------------
// run record
// ---------------------------------------------------------------------------

/// A snapshot of one batch's GCR inputs, for recomputation checks.
struct CapturedBatch {
    bool present = false;
    std::vector<std::vector<double>> tap_features;  // per tap, row-major n×d
    std::vector<Shape> tap_shapes;
    std::vector<double> logits;
    Shape logits_shape;
    std::vector<int> labels;
    std::vector<double> tap_losses;
    std::vector<double> tap_weights;
    double gcr_value = 0.0;    // Σ w_l · loss_l
    double gcr_component = 0.0;  // λ · gcr_value, as recorded
};

struct RunRecord {
    // per-epoch series
    std::vector<double> lr;
    std::vector<double> train_loss;
    std::vector<double> ce;
    std::vector<double> gcr;  // λ-weighted GCR component; identically 0 at λ=0
    std::vector<double> train_acc;
    std::vector<double> test_acc;
    std::vector<std::vector<double>> tap_loss_mean;    // [epoch][tap]
    std::vector<std::vector<double>> tap_weight_mean;  // [epoch][tap]

    // per-batch series (kept in memory for accounting checks)
    std::vector<std::vector<double>> batch_tap_losses;
    std::vector<std::vector<double>> batch_tap_weights;

    std::vector<std::size_t> taps;
    std::string config_hash;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;  // never serialized
    bool diverged = false;
    std::size_t completed_epochs = 0;

    std::vector<std::vector<std::vector<double>>> param_snapshots;  // [epoch][param][coord]
    CapturedBatch captured;
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hash_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(s)));
    return std::string(buf);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
    double accuracy = 0.0;
    double mean_ce = 0.0;
    std::vector<int> predictions;
};

/// Argmax-of-logits evaluation; ties break toward the lowest class id.
inline EvalResult evaluate(const Network& net, const LabeledDataset& ds) {
    if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
    if (ds.classes != net.classes())
        throw ContractError("evaluate: dataset has " + std::to_string(ds.classes) +
                            " classes, network expects " + std::to_string(net.classes()));
    EvalResult res;
    res.predictions.resize(ds.size());
    std::size_t correct = 0;
    double ce_sum = 0.0;
    const std::size_t chunk = 256;
    const std::size_t c = net.classes();
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t len = std::min(chunk, ds.size() - start);
        std::vector<std::size_t> idx(len);
        for (std::size_t i = 0; i < len; ++i) idx[i] = start + i;
        auto [x, labels] = ds.gather_batch(idx);
        Tensor logits = net.forward(x);
        const auto z = logits.values();
        for (std::size_t i = 0; i < len; ++i) {
            const double* row = &z[i * c];
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (row[j] > row[best]) best = j;
            res.predictions[start + i] = static_cast<int>(best);
            if (static_cast<int>(best) == labels[i]) ++correct;
            // per-sample cross entropy in log-space
            double m = row[0];
            for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
            double denom = 0.0;
            for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - m);
            ce_sum -= row[labels[i]] - m - std::log(denom);
        }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    res.mean_ce = ce_sum / static_cast<double>(ds.size());
    return res;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

/// Per-batch loss assembly shared by the trainer and the gradient-check
/// harness. P and M are built once from the forward's logits and labels and
/// reused across taps; adaptive weights are detached constants of the step.
struct BatchObjective {
    Tensor objective;
    Tensor ce;
    std::vector<Tensor> tap_losses;
    std::vector<double> tap_weights;
    double gcr_value = 0.0;      // Σ w_l · loss_l (0 when GCR disabled)
    double gcr_component = 0.0;  // λ-scaled, as recorded
    Network::ForwardResult forward;
};

inline BatchObjective assemble_batch_objective(const Network& net, const Tensor& x,
                                               const std::vector<int>& labels,
                                               const GCRConfig& gcr,
                                               const std::vector<std::size_t>& taps) {
    BatchObjective out;
    out.forward = net.forward_with_taps(x, taps);
    out.ce = cross_entropy(out.forward.logits, labels);
    out.objective = out.ce;
    if (taps.empty()) return out;

    SimilarityMatrix s = prediction_graph(out.forward.logits);
    SimilarityMatrix p = masked_prediction_graph(s, class_mask(labels));
    for (const Tensor& feat : out.forward.tapped) {
        SimilarityMatrix f = feature_graph(feat, gcr.kernel);
        out.tap_losses.push_back(layer_alignment_loss(f, p, gcr.normalize_pairs));
    }
    std::vector<double> loss_values;
    loss_values.reserve(out.tap_losses.size());
    for (const Tensor& l : out.tap_losses) loss_values.push_back(l.item());
    out.tap_weights = gcr.scheme == WeightingScheme::adaptive
                          ? adaptive_weights(loss_values)
                          : fixed_weights(gcr.scheme, taps.size());

    Tensor gcr_sum = gcr_total({out.tap_losses, out.tap_weights});
    out.gcr_value = gcr_sum.item();
    out.gcr_component = gcr.lambda * out.gcr_value;
    out.objective = total_loss(out.ce, gcr_sum, gcr.lambda);

    if (gcr.tau > 0.0 && gcr.beta > 0.0) {
        for (const Tensor& feat : out.forward.tapped) {
            Tensor pen = anti_collapse_penalty(feat, labels, gcr.tau, gcr.beta);
            if (pen.requires_grad() || pen.item() != 0.0)
                out.objective = add(out.objective, pen);
        }
    }
    return out;
}

/// Full training run. Deterministic given (config, datasets): data order,
/// initialization, and arithmetic derive from cfg.seed alone.
inline RunRecord train(Network& net, const LabeledDataset& train_ds,
                       const LabeledDataset& test_ds, const TrainConfig& cfg) {
    cfg.validate();
    train_ds.validate();
    test_ds.validate();
    if (train_ds.classes != net.classes() || test_ds.classes != net.classes())
        throw ContractError("train: dataset class count does not match network");

    const bool gcr_on = cfg.gcr.enabled;
    const std::vector<std::size_t> taps =
        gcr_on ? resolve_taps(net, cfg.gcr) : std::vector<std::size_t>{};

    RunRecord rec;
    rec.taps = taps;
    rec.seed = cfg.seed;
    {
        std::ostringstream os;
        os << "epochs=" << cfg.epochs << ";lr=" << cfg.base_lr << ";decay=" << cfg.decay_factor
           << ";at=";
        for (auto e : cfg.decay_epochs) os << e << ",";
        os << ";mom=" << cfg.momentum << ";wd=" << cfg.weight_decay << ";n=" << cfg.batch.n
           << ";drop=" << cfg.batch.drop_last << ";gcr=" << gcr_on
           << ";placement=" << placement_name(cfg.gcr.placement)
           << ";scheme=" << scheme_name(cfg.gcr.scheme) << ";kernel=" << cfg.gcr.kernel.name()
           << ";lambda=" << cfg.gcr.lambda << ";tau=" << cfg.gcr.tau << ";beta=" << cfg.gcr.beta
           << ";norm=" << cfg.gcr.normalize_pairs << ";train=" << train_ds.provenance
           << ";test=" << test_ds.provenance;
        rec.config_hash = detail::hash_hex(os.str());
    }

    auto& params = net.parameters();
    std::vector<std::vector<double>> velocity(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        velocity[i].assign(params[i].size(), 0.0);

    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        BatchPlan plan = cfg.batch;
        plan.shuffle_seed = mix_seed(cfg.seed, 0xB000 + epoch);
        const auto batch_indices = batches(train_ds, plan);

        double loss_sum = 0.0, ce_sum = 0.0, gcr_sum = 0.0;
        std::vector<double> tap_loss_sum(taps.size(), 0.0), tap_weight_sum(taps.size(), 0.0);
        std::size_t samples = 0;
        bool aborted = false;

        for (std::size_t bi = 0; bi < batch_indices.size(); ++bi) {
            auto [x, labels] = train_ds.gather_batch(batch_indices[bi]);
            BatchObjective obj;
            try {
                obj = assemble_batch_objective(net, x, labels, cfg.gcr, taps);
            } catch (const NumericError&) {
                // non-finite activations reached a softmax/graph input
                rec.diverged = true;
                aborted = true;
                break;
            }

            const double loss_val = obj.objective.item();
            if (!std::isfinite(loss_val)) {
                rec.diverged = true;
                aborted = true;
                break;
            }
            backward(obj.objective);

            const std::size_t bs = labels.size();
            samples += bs;
            loss_sum += loss_val * static_cast<double>(bs);
            ce_sum += obj.ce.item() * static_cast<double>(bs);
            gcr_sum += obj.gcr_component * static_cast<double>(bs);
            for (std::size_t k = 0; k < taps.size(); ++k) {
                tap_loss_sum[k] += obj.tap_losses[k].item() * static_cast<double>(bs);
                tap_weight_sum[k] += obj.tap_weights[k] * static_cast<double>(bs);
            }
            if (!taps.empty()) {
                std::vector<double> bl(taps.size()), bw(taps.size());
                for (std::size_t k = 0; k < taps.size(); ++k) {
                    bl[k] = obj.tap_losses[k].item();
                    bw[k] = obj.tap_weights[k];
                }
                rec.batch_tap_losses.push_back(std::move(bl));
                rec.batch_tap_weights.push_back(std::move(bw));
            }
            if (cfg.capture_first_batch && !rec.captured.present && !taps.empty()) {
                auto& cap = rec.captured;
                cap.present = true;
                for (const Tensor& f : obj.forward.tapped) {
                    cap.tap_features.emplace_back(f.values().begin(), f.values().end());
                    cap.tap_shapes.push_back(f.shape());
                }
                cap.logits.assign(obj.forward.logits.values().begin(),
                                  obj.forward.logits.values().end());
                cap.logits_shape = obj.forward.logits.shape();
                cap.labels = labels;
                for (const Tensor& l : obj.tap_losses) cap.tap_losses.push_back(l.item());
                cap.tap_weights = obj.tap_weights;
                cap.gcr_value = obj.gcr_value;
                cap.gcr_component = obj.gcr_component;
            }

            try {
                for (std::size_t pi = 0; pi < params.size(); ++pi) {
                    if (params[pi].has_grad()) {
                        sgd_step(params[pi].values_mut(), params[pi].grad(), velocity[pi], lr,
                                 cfg.momentum, cfg.weight_decay);
                    } else {
                        // parameter unreachable from this batch's objective
                        const std::vector<double> z(params[pi].size(), 0.0);
                        sgd_step(params[pi].values_mut(), z, velocity[pi], lr, cfg.momentum,
                                 cfg.weight_decay);
                    }
                }
            } catch (const DivergenceError&) {
                rec.diverged = true;
                aborted = true;
                break;
            }
        }
        if (aborted) break;

        const double ns = static_cast<double>(samples);
        rec.lr.push_back(lr);
        rec.train_loss.push_back(loss_sum / ns);
        rec.ce.push_back(ce_sum / ns);
        rec.gcr.push_back(gcr_sum / ns);
        std::vector<double> tlm(taps.size()), twm(taps.size());
        for (std::size_t k = 0; k < taps.size(); ++k) {
            tlm[k] = tap_loss_sum[k] / ns;
            twm[k] = tap_weight_sum[k] / ns;
        }
        rec.tap_loss_mean.push_back(std::move(tlm));
        rec.tap_weight_mean.push_back(std::move(twm));

        rec.train_acc.push_back(evaluate(net, train_ds).accuracy);
        rec.test_acc.push_back(evaluate(net, test_ds).accuracy);
        rec.completed_epochs = epoch + 1;

        if (cfg.snapshot_params) {
            std::vector<std::vector<double>> snap;
            snap.reserve(params.size());
            for (const auto& p : params)
                snap.emplace_back(p.values().begin(), p.values().end());
            rec.param_snapshots.push_back(std::move(snap));
        }
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

}  // namespace gcr
