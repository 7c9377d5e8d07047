#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include "gcr/diagnostics.hpp"
#include "gcr/manifest.hpp"
#include "gcr/serialize.hpp"
#include "gcr/trainer.hpp"

namespace gcr {

// Exit-code discipline shared by every command:
// 0 success, 1 check failure, 2 configuration error, 3 divergence.
enum ExitCode : int {
    exit_ok = 0,
    exit_check_failed = 1,
    exit_config_error = 2,
    exit_divergence = 3,
};

namespace detail {

inline std::string seed_dir(const std::string& base, std::uint64_t seed) {
    return base + "/seed_" + std::to_string(seed);
}

}  // namespace detail

struct SeedRunResult {
    std::uint64_t seed = 0;
    RunRecord record;
    std::string dir;
};

/// Trains one seed of a manifest and writes record.csv, summary.json and
/// checkpoint.json under out_dir/seed_<seed>/.
inline SeedRunResult run_one_seed(const RunManifest& m, std::uint64_t seed,
                                  const std::string& out_dir) {
    auto [train_ds, test_ds] = m.dataset.materialize(seed);
    Network net(m.network, seed);
    TrainConfig cfg = m.train;
    cfg.seed = seed;
    RunRecord rec = train(net, train_ds, test_ds, cfg);
    rec.config_hash = manifest_hash(m);

    SeedRunResult res{seed, std::move(rec), detail::seed_dir(out_dir, seed)};
    std::filesystem::create_directories(res.dir);
    write_record_csv(res.record, res.dir + "/record.csv");
    write_run_summary(res.record, res.dir + "/summary.json");
    save_checkpoint(net, res.dir + "/checkpoint.json");
    return res;
}

inline int cmd_train(const RunManifest& m, std::ostream& log) {
    bool diverged = false;
    for (std::uint64_t seed : m.seeds) {
        SeedRunResult res = run_one_seed(m, seed, m.out_dir);
        const auto& rec = res.record;
        log << "seed " << seed << ": ";
        if (rec.diverged) {
            log << "DIVERGED after " << rec.completed_epochs << " epochs (partial record at "
                << res.dir << ")\n";
            diverged = true;
        } else {
            log << "test_acc=" << rec.test_acc.back() << " ce=" << rec.ce.back()
                << " gcr=" << rec.gcr.back() << " -> " << res.dir << "\n";
        }
    }
    return diverged ? exit_divergence : exit_ok;
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
    std::string value;
    std::vector<double> final_acc;  // per succeeded seed
    bool failed = false;
};

inline std::vector<std::string> default_axis_values(const std::string& axis) {
    if (axis == "placement")
        return {"early", "mid", "late", "early+mid", "mid+late", "early+late", "full"};
    if (axis == "scheme")
        return {"equal", "linear", "squared", "sqrt", "cosine", "arccos", "adaptive"};
    throw ConfigError("sweep: axis '" + axis + "' requires explicit --values");
}

inline RunManifest manifest_for_cell(RunManifest m, const std::string& axis,
                                     const std::string& value) {
    if (axis == "placement") {
        m.train.gcr.enabled = true;
        m.train.gcr.explicit_taps.reset();
        m.train.gcr.placement = parse_placement(value);
    } else if (axis == "scheme") {
        m.train.gcr.enabled = true;
        m.train.gcr.scheme = parse_scheme(value);
    } else if (axis == "lambda") {
        char* end = nullptr;
        const double lam = std::strtod(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0' || !(lam >= 0.0))
            throw ConfigError("sweep: bad lambda value '" + value + "'");
        m.train.gcr.enabled = true;
        m.train.gcr.lambda = lam;
    } else {
        throw ConfigError("sweep: unknown axis '" + axis + "' (placement|scheme|lambda)");
    }
    return m;
}

/// Cross-product of seeds × axis values; emits a per-value mean±std summary
/// CSV. Failed cells are marked and the sweep continues. Cells may run
/// concurrently up to `workers`, each writing only its own subdirectory.
inline int cmd_sweep(const RunManifest& m, const std::string& axis,
                     std::vector<std::string> values, std::size_t workers, std::ostream& log) {
    if (values.empty()) values = default_axis_values(axis);
    for (const auto& v : values) manifest_for_cell(m, axis, v);  // validate before launch
    if (workers < 1) workers = 1;

    struct Job {
        std::string value;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& v : values)
        for (std::uint64_t s : m.seeds) jobs.push_back({v, s});

    std::vector<int> status(jobs.size(), 0);  // 0 ok, 1 diverged, 2 error
    std::vector<double> acc(jobs.size(), 0.0);
    std::size_t next = 0;
    while (next < jobs.size()) {
        const std::size_t batch_end = std::min(jobs.size(), next + workers);
        std::vector<std::future<void>> futs;
        for (std::size_t i = next; i < batch_end; ++i) {
            futs.push_back(std::async(std::launch::async, [&, i] {
                const Job& job = jobs[i];
                try {
                    RunManifest cell = manifest_for_cell(m, axis, job.value);
                    const std::string dir = m.out_dir + "/" + axis + "_" + job.value;
                    SeedRunResult res = run_one_seed(cell, job.seed, dir);
                    if (res.record.diverged)
                        status[i] = 1;
                    else
                        acc[i] = res.record.test_acc.back();
                } catch (const std::exception&) {
                    status[i] = 2;
                }
            }));
        }
        for (auto& f : futs) f.get();
        next = batch_end;
    }

    std::filesystem::create_directories(m.out_dir);
    const std::string summary_path = m.out_dir + "/sweep_summary.csv";
    std::ofstream out(summary_path);
    if (!out) throw IoError("cannot write " + summary_path);
    out << "axis,value,seeds,mean_acc,std_acc,status\n";
    bool any_failed = false;
    for (const auto& v : values) {
        std::vector<double> cell_acc;
        bool failed = false;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].value != v) continue;
            if (status[i] == 0)
                cell_acc.push_back(acc[i]);
            else
                failed = true;
        }
        double mean = 0.0, sd = 0.0;
        for (double a : cell_acc) mean += a;
        if (!cell_acc.empty()) mean /= static_cast<double>(cell_acc.size());
        if (cell_acc.size() > 1) {
            for (double a : cell_acc) sd += (a - mean) * (a - mean);
            sd = std::sqrt(sd / static_cast<double>(cell_acc.size() - 1));
        }
        out << axis << "," << v << "," << cell_acc.size() << "," << detail::g17(mean) << ","
            << detail::g17(sd) << "," << (failed ? "failed" : "ok") << "\n";
        log << axis << "=" << v << ": mean_acc=" << mean << " std=" << sd
            << (failed ? " [some cells failed]" : "") << "\n";
        any_failed = any_failed || failed;
    }
    log << "summary: " << summary_path << "\n";
    return any_failed ? exit_divergence : exit_ok;
}

// ---------------------------------------------------------------------------
// diagnostics command
// ---------------------------------------------------------------------------

namespace detail {

struct CollectedOutputs {
    Tensor features;  // penultimate tapped features, [N x d]
    Tensor probs;     // softmax over logits, [N x C]
    std::vector<int> labels;
    std::vector<int> preds;
    std::size_t feature_layer = 0;
};

inline CollectedOutputs collect_outputs(const Network& net, const LabeledDataset& ds) {
    const std::size_t tap = net.tap_eligible_layers().back();
    CollectedOutputs out;
    out.feature_layer = tap;
    out.labels = ds.labels;
    const std::size_t c = net.classes();
    std::vector<double> feats;
    std::vector<double> probs;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        const std::size_t len = std::min(chunk, ds.size() - start);
        std::vector<std::size_t> idx(len);
        for (std::size_t i = 0; i < len; ++i) idx[i] = start + i;
        auto [x, labels] = ds.gather_batch(idx);
        auto fr = net.forward_with_taps(x, {tap});
        const auto fv = fr.tapped[0].values();
        feats.insert(feats.end(), fv.begin(), fv.end());
        const auto z = fr.logits.values();
        std::vector<double> row(c);
        for (std::size_t i = 0; i < len; ++i) {
            softmax_row(&z[i * c], c, row.data());
            probs.insert(probs.end(), row.begin(), row.end());
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (z[i * c + j] > z[i * c + best]) best = j;
            out.preds.push_back(static_cast<int>(best));
        }
    }
    const std::size_t d = feats.size() / ds.size();
    out.features = Tensor::from({ds.size(), d}, std::move(feats), false);
    out.probs = Tensor::from({ds.size(), c}, std::move(probs), false);
    return out;
}

}  // namespace detail

/// Computes the full metric suite for a checkpoint on the manifest's test
/// set and writes report + graph exports into record_dir. Re-running with
/// identical inputs is byte-identical.
inline int cmd_diagnose(const RunManifest& m, const std::string& record_dir,
                        const std::string& checkpoint_path, std::ostream& log) {
    if (!std::filesystem::exists(checkpoint_path)) {
        log << "checkpoint not found: " << checkpoint_path << "\n";
        return exit_config_error;
    }
    Network net = load_checkpoint(checkpoint_path);
    auto [train_ds, test_ds] = m.dataset.materialize(net.seed());
    (void)train_ds;
    if (test_ds.classes != net.classes()) {
        log << "dataset classes do not match checkpoint network\n";
        return exit_config_error;
    }

    auto collected = detail::collect_outputs(net, test_ds);

    DiagnosticsReport rep;
    rep.feature_layer = collected.feature_layer;
    rep.silhouette = silhouette(collected.features, collected.labels);
    const auto sep = separability_ratio(collected.features, collected.labels);
    rep.sep_ratio = sep.ratio;
    rep.sep_degenerate = sep.degenerate;
    rep.mean_confidence = mean_confidence(collected.probs, collected.labels);
    rep.confusion = confusion_matrix(collected.preds, collected.labels, net.classes());
    rep.variance = intra_inter_variance(collected.features, collected.labels);
    rep.provenance =
        "penultimate tapped features (layer " + std::to_string(collected.feature_layer) +
        "); sep_ratio = mean inter-class / mean intra-class pairwise Euclidean distance; "
        "confidence = mean max softmax probability; test set: " + test_ds.provenance;

    // one seeded evaluation batch for graphs and the spectral series
    BatchPlan plan = m.train.batch;
    plan.n = std::min(plan.n, test_ds.size());
    plan.shuffle_seed = mix_seed(net.seed(), 0xD1A6);
    const auto batch_idx = batches(test_ds, plan).front();
    auto [bx, blabels] = test_ds.gather_batch(batch_idx);
    auto fr = net.forward_with_taps(bx, {collected.feature_layer});
    SimilarityMatrix fg = feature_graph(fr.tapped[0], m.train.gcr.kernel);
    SimilarityMatrix pg =
        masked_prediction_graph(prediction_graph(fr.logits), class_mask(blabels));
    rep.spectral = spectral_alignment_check(fg, pg, {1e-3, 1e-2, 1e-1});

    std::filesystem::create_directories(record_dir);
    write_report(rep, record_dir + "/report.json", record_dir + "/report.csv");
    export_graph(fg, blabels, 0.4, record_dir + "/graph_feature.json");
    export_graph(pg, blabels, 0.4, record_dir + "/graph_prediction.json");
    export_graph_dot(fg, blabels, 0.4, record_dir + "/graph_feature.dot");

    // raw penultimate features for external embedding tools
    LabeledDataset feat_ds;
    feat_ds.sample_shape = {collected.features.dim(1)};
    feat_ds.features.assign(collected.features.values().begin(),
                            collected.features.values().end());
    feat_ds.labels = collected.labels;
    feat_ds.classes = net.classes();
    save_csv(feat_ds, record_dir + "/penultimate_features.csv");

    log << "silhouette=" << rep.silhouette << " sep_ratio=" << rep.sep_ratio
        << " confidence=" << rep.mean_confidence << " intra=" << rep.variance.intra
        << " inter=" << rep.variance.inter << " -> " << record_dir << "\n";
    return exit_ok;
}

// ---------------------------------------------------------------------------
// graph export command
// ---------------------------------------------------------------------------

inline int cmd_export_graph(const RunManifest& m, const std::string& checkpoint_path,
                            double threshold, const std::string& out_path,
                            const std::string& dot_path, std::ostream& log) {
    if (!std::filesystem::exists(checkpoint_path)) {
        log << "checkpoint not found: " << checkpoint_path << "\n";
        return exit_config_error;
    }
    Network net = load_checkpoint(checkpoint_path);
    auto [train_ds, test_ds] = m.dataset.materialize(net.seed());
    (void)train_ds;
    BatchPlan plan = m.train.batch;
    plan.n = std::min(plan.n, test_ds.size());
    plan.shuffle_seed = mix_seed(net.seed(), 0xD1A6);
    const auto batch_idx = batches(test_ds, plan).front();
    auto [bx, blabels] = test_ds.gather_batch(batch_idx);
    const std::size_t tap = net.tap_eligible_layers().back();
    auto fr = net.forward_with_taps(bx, {tap});
    SimilarityMatrix fg = feature_graph(fr.tapped[0], m.train.gcr.kernel);
    export_graph(fg, blabels, threshold, out_path);
    if (!dot_path.empty()) export_graph_dot(fg, blabels, threshold, dot_path);
    log << "wrote " << out_path << " (threshold " << threshold << ")\n";
    return exit_ok;
}

// ---------------------------------------------------------------------------
// gradient check command
// ---------------------------------------------------------------------------

/// Finite-difference audit of the full training objective for every
/// parameter tensor of a toy-sized manifest. Exit 0 iff every max relative
/// error is below 1e-4.
inline int cmd_gradcheck(const RunManifest& m, std::ostream& log, double eps = 1e-5,
                         double tol = 1e-4) {
    const std::uint64_t seed = m.seeds.front();
    Network net(m.network, seed);
    if (net.parameter_count() > 10000) {
        log << "manifest too large for finite differencing: " << net.parameter_count()
            << " parameters (limit 10000)\n";
        return exit_config_error;
    }
    auto [train_ds, test_ds] = m.dataset.materialize(seed);
    (void)test_ds;
    BatchPlan plan = m.train.batch;
    plan.n = std::min(plan.n, train_ds.size());
    plan.shuffle_seed = mix_seed(seed, 0xB000);
    const auto batch_idx = batches(train_ds, plan).front();
    auto [x, labels] = train_ds.gather_batch(batch_idx);

    const auto taps = m.train.gcr.enabled ? resolve_taps(net, m.train.gcr)
                                          : std::vector<std::size_t>{};
    BatchObjective obj = assemble_batch_objective(net, x, labels, m.train.gcr, taps);
    backward(obj.objective);
    ComputationRecord record = ComputationRecord::from(obj.objective);

    bool ok = true;
    for (std::size_t pi = 0; pi < net.parameters().size(); ++pi) {
        auto& p = net.parameters()[pi];
        const auto rep = replay_difference_check(record, obj.objective, p, eps);
        log << "param " << pi << " " << shape_str(p.shape())
            << ": max_rel_err=" << rep.max_rel_error << "\n";
        if (!(rep.max_rel_error < tol)) ok = false;
    }
    log << (ok ? "gradcheck OK" : "gradcheck FAILED") << " (tolerance " << tol << ")\n";
    return ok ? exit_ok : exit_check_failed;
}

}  // namespace gcr
