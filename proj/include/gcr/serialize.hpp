#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcr/diagnostics.hpp"
#include "gcr/errors.hpp"
#include "gcr/model.hpp"
#include "gcr/trainer.hpp"

namespace gcr {

namespace detail {

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// run record CSV + summary
// ---------------------------------------------------------------------------

/// Per-epoch time series: epoch, lr, losses, per-tap loss/weight columns,
/// accuracies. Doubles are printed round-trippably; no timestamps.
inline void write_record_csv(const RunRecord& rec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "epoch,lr,train_loss,ce,gcr";
    for (std::size_t k = 0; k < rec.taps.size(); ++k)
        out << ",tap" << rec.taps[k] << "_loss,tap" << rec.taps[k] << "_weight";
    out << ",train_acc,test_acc\n";
    for (std::size_t e = 0; e < rec.completed_epochs; ++e) {
        out << e << "," << detail::g17(rec.lr[e]) << "," << detail::g17(rec.train_loss[e]) << ","
            << detail::g17(rec.ce[e]) << "," << detail::g17(rec.gcr[e]);
        for (std::size_t k = 0; k < rec.taps.size(); ++k)
            out << "," << detail::g17(rec.tap_loss_mean[e][k]) << ","
                << detail::g17(rec.tap_weight_mean[e][k]);
        out << "," << detail::g17(rec.train_acc[e]) << "," << detail::g17(rec.test_acc[e])
            << "\n";
    }
}

inline void write_run_summary(const RunRecord& rec, const std::string& path) {
    nlohmann::ordered_json doc;
    doc["config_hash"] = rec.config_hash;
    doc["seed"] = rec.seed;
    doc["completed_epochs"] = rec.completed_epochs;
    doc["diverged"] = rec.diverged;
    doc["taps"] = rec.taps;
    if (rec.completed_epochs > 0) {
        const std::size_t e = rec.completed_epochs - 1;
        doc["final"] = {{"train_loss", rec.train_loss[e]}, {"ce", rec.ce[e]},
                        {"gcr", rec.gcr[e]},           {"train_acc", rec.train_acc[e]},
                        {"test_acc", rec.test_acc[e]}};
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << doc.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json layer_to_json(const LayerSpec& l) {
    nlohmann::ordered_json j;
    switch (l.kind) {
        case LayerKind::dense:
            j["kind"] = "dense";
            j["in"] = l.in;
            j["out"] = l.out;
            break;
        case LayerKind::conv:
            j["kind"] = "conv";
            j["out_channels"] = l.out_channels;
            j["kh"] = l.kh;
            j["kw"] = l.kw;
            j["padding"] = l.padding == Padding::same ? "same" : "valid";
            break;
        case LayerKind::maxpool:
            j["kind"] = "maxpool";
            j["window"] = l.window;
            break;
        case LayerKind::relu: j["kind"] = "relu"; break;
        case LayerKind::flatten: j["kind"] = "flatten"; break;
    }
    return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "dense")
        return LayerSpec::dense(j.at("out").get<std::size_t>(),
                                j.value("in", std::size_t{0}));
    if (kind == "conv") {
        const std::string pad = j.value("padding", "valid");
        if (pad != "valid" && pad != "same")
            throw ConfigError("layer: padding must be 'valid' or 'same'");
        return LayerSpec::conv(j.at("out_channels").get<std::size_t>(),
                               j.at("kh").get<std::size_t>(), j.at("kw").get<std::size_t>(),
                               pad == "same" ? Padding::same : Padding::valid);
    }
    if (kind == "maxpool") return LayerSpec::maxpool(j.value("window", std::size_t{2}));
    if (kind == "relu") return LayerSpec::relu();
    if (kind == "flatten") return LayerSpec::flatten();
    throw ConfigError("unknown layer kind '" + kind + "'");
}

}  // namespace detail

inline nlohmann::ordered_json network_spec_to_json(const NetworkSpec& spec) {
    nlohmann::ordered_json j;
    j["input"] = spec.input_shape;
    j["classes"] = spec.classes;
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : spec.layers) j["layers"].push_back(detail::layer_to_json(l));
    return j;
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    NetworkSpec spec;
    spec.input_shape = j.at("input").get<Shape>();
    spec.classes = j.at("classes").get<std::size_t>();
    for (const auto& l : j.at("layers")) spec.layers.push_back(detail::layer_from_json(l));
    return spec;
}

inline void save_checkpoint(const Network& net, const std::string& path) {
    nlohmann::ordered_json doc;
    doc["network"] = network_spec_to_json(net.spec());
    doc["seed"] = net.seed();
    doc["parameters"] = nlohmann::ordered_json::array();
    for (const auto& p : net.parameters())
        doc["parameters"].push_back(std::vector<double>(p.values().begin(), p.values().end()));
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << doc.dump() << "\n";
}

inline Network load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint " + path);
    nlohmann::json doc = nlohmann::json::parse(in);
    Network net(network_spec_from_json(doc.at("network")), doc.at("seed").get<std::uint64_t>());
    std::vector<std::vector<double>> values;
    for (const auto& p : doc.at("parameters")) values.push_back(p.get<std::vector<double>>());
    net.load_parameter_values(values);
    return net;
}

// ---------------------------------------------------------------------------
// diagnostics report
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const DiagnosticsReport& rep) {
    nlohmann::ordered_json doc;
    doc["silhouette"] = rep.silhouette;
    doc["sep_ratio"] = rep.sep_degenerate ? nlohmann::ordered_json("inf")
                                          : nlohmann::ordered_json(rep.sep_ratio);
    doc["sep_degenerate"] = rep.sep_degenerate;
    doc["mean_confidence"] = rep.mean_confidence;
    doc["confusion"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < rep.confusion.classes; ++i) {
        std::vector<double> row(rep.confusion.rows.begin() +
                                    static_cast<std::ptrdiff_t>(i * rep.confusion.classes),
                                rep.confusion.rows.begin() +
                                    static_cast<std::ptrdiff_t>((i + 1) * rep.confusion.classes));
        doc["confusion"].push_back(row);
    }
    doc["confusion_supported"] =
        std::vector<int>(rep.confusion.supported.begin(), rep.confusion.supported.end());
    doc["intra_variance"] = rep.variance.intra;
    doc["inter_variance"] = rep.variance.inter;
    doc["variance_flagged_classes"] = rep.variance.flagged_classes;
    doc["spectral"] = nlohmann::ordered_json::array();
    for (const auto& s : rep.spectral)
        doc["spectral"].push_back({{"epsilon", s.epsilon},
                                   {"graph_residual", s.graph_residual},
                                   {"laplacian_residual", s.laplacian_residual}});
    doc["feature_layer"] = rep.feature_layer;
    doc["provenance"] = rep.provenance;
    return doc;
}

inline void write_report(const DiagnosticsReport& rep, const std::string& json_path,
                         const std::string& csv_path) {
    {
        std::ofstream out(json_path);
        if (!out) throw IoError("cannot write " + json_path);
        out << report_to_json(rep).dump(2) << "\n";
    }
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write " + csv_path);
    out << "metric,value\n";
    out << "silhouette," << detail::g17(rep.silhouette) << "\n";
    out << "sep_ratio," << (rep.sep_degenerate ? "inf" : detail::g17(rep.sep_ratio)) << "\n";
    out << "mean_confidence," << detail::g17(rep.mean_confidence) << "\n";
    out << "intra_variance," << detail::g17(rep.variance.intra) << "\n";
    out << "inter_variance," << detail::g17(rep.variance.inter) << "\n";
    for (const auto& s : rep.spectral)
        out << "laplacian_residual_eps_" << detail::g17(s.epsilon) << ","
            << detail::g17(s.laplacian_residual) << "\n";
}

}  // namespace gcr
