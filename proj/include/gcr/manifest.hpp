#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcr/data.hpp"
#include "gcr/errors.hpp"
#include "gcr/serialize.hpp"
#include "gcr/trainer.hpp"

namespace gcr {

// ---------------------------------------------------------------------------
// dataset specification
// ---------------------------------------------------------------------------

struct DatasetSpec {
    enum class Type { blobs, rings, idx, csv };
    Type type = Type::blobs;

    // blobs
    std::size_t classes = 4;
    std::size_t per_class = 250;
    std::size_t dim = 2;
    double sigma = 1.35;
    std::size_t test_per_class = 250;

    // rings
    double noise = 0.1;

    // idx / csv
    std::string images, labels, test_images, test_labels;
    std::string path, test_path, label_column = "label";

    /// Train/test pair. Synthetic sets draw train and test from disjoint
    /// derived streams of the run seed; file-backed sets read both files.
    std::pair<LabeledDataset, LabeledDataset> materialize(std::uint64_t seed) const {
        switch (type) {
            case Type::blobs:
                return {gaussian_blobs(classes, per_class, dim, sigma, mix_seed(seed, 0xDA7A)),
                        gaussian_blobs(classes, test_per_class, dim, sigma,
                                       mix_seed(seed, 0x7E57))};
            case Type::rings:
                return {two_rings(per_class, noise, mix_seed(seed, 0xDA7A)),
                        two_rings(test_per_class, noise, mix_seed(seed, 0x7E57))};
            case Type::idx:
                return {load_idx(images, labels), load_idx(test_images, test_labels)};
            case Type::csv:
                return {load_csv(path, label_column), load_csv(test_path, label_column)};
        }
        throw ConfigError("dataset: unknown type");
    }
};

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

/// Parsed run configuration: network, dataset, training recipe, GCR settings,
/// output directory and seed list. Unknown keys are rejected wholesale.
struct RunManifest {
    NetworkSpec network;
    DatasetSpec dataset;
    TrainConfig train;
    std::string out_dir = "runs";
    std::vector<std::uint64_t> seeds = {1};
    std::string preset = "desk";
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

inline void require_file(const std::string& path, const std::string& what) {
    if (!std::filesystem::exists(path))
        throw ConfigError(what + ": referenced file does not exist: " + path);
}

inline DatasetSpec parse_dataset(const nlohmann::json& j) {
    DatasetSpec ds;
    const std::string type = j.at("type").get<std::string>();
    if (type == "blobs") {
        ds.type = DatasetSpec::Type::blobs;
        reject_unknown_keys(
            j, {"type", "classes", "per_class", "dim", "sigma", "test_per_class"}, "dataset");
        ds.classes = j.value("classes", ds.classes);
        ds.per_class = j.value("per_class", ds.per_class);
        ds.dim = j.value("dim", ds.dim);
        ds.sigma = j.value("sigma", ds.sigma);
        ds.test_per_class = j.value("test_per_class", ds.per_class);
    } else if (type == "rings") {
        ds.type = DatasetSpec::Type::rings;
        reject_unknown_keys(j, {"type", "per_class", "noise", "test_per_class"}, "dataset");
        ds.per_class = j.value("per_class", ds.per_class);
        ds.noise = j.value("noise", ds.noise);
        ds.test_per_class = j.value("test_per_class", ds.per_class);
        ds.classes = 2;
    } else if (type == "idx") {
        ds.type = DatasetSpec::Type::idx;
        reject_unknown_keys(j, {"type", "images", "labels", "test_images", "test_labels"},
                            "dataset");
        ds.images = j.at("images").get<std::string>();
        ds.labels = j.at("labels").get<std::string>();
        ds.test_images = j.at("test_images").get<std::string>();
        ds.test_labels = j.at("test_labels").get<std::string>();
        require_file(ds.images, "dataset.images");
        require_file(ds.labels, "dataset.labels");
        require_file(ds.test_images, "dataset.test_images");
        require_file(ds.test_labels, "dataset.test_labels");
    } else if (type == "csv") {
        ds.type = DatasetSpec::Type::csv;
        reject_unknown_keys(j, {"type", "path", "test_path", "label_column"}, "dataset");
        ds.path = j.at("path").get<std::string>();
        ds.test_path = j.at("test_path").get<std::string>();
        ds.label_column = j.value("label_column", ds.label_column);
        require_file(ds.path, "dataset.path");
        require_file(ds.test_path, "dataset.test_path");
    } else {
        throw ConfigError("dataset: unknown type '" + type + "'");
    }
    return ds;
}

inline NetworkSpec parse_network(const nlohmann::json& j) {
    reject_unknown_keys(j, {"input", "layers", "classes"}, "network");
    NetworkSpec spec;
    spec.input_shape = j.at("input").get<Shape>();
    spec.classes = j.at("classes").get<std::size_t>();
    for (const auto& lj : j.at("layers")) {
        const std::string kind = lj.at("kind").get<std::string>();
        if (kind == "dense")
            reject_unknown_keys(lj, {"kind", "in", "out"}, "network.layers");
        else if (kind == "conv")
            reject_unknown_keys(lj, {"kind", "out_channels", "kh", "kw", "padding"},
                                "network.layers");
        else if (kind == "maxpool")
            reject_unknown_keys(lj, {"kind", "window"}, "network.layers");
        else if (kind == "relu" || kind == "flatten")
            reject_unknown_keys(lj, {"kind"}, "network.layers");
        spec.layers.push_back(layer_from_json(lj));
    }
    return spec;
}

inline SimilarityKernel parse_kernel_json(const nlohmann::json& j) {
    if (j.is_string()) return SimilarityKernel::parse(j.get<std::string>());
    reject_unknown_keys(j, {"name", "gamma", "degree", "offset", "scale"}, "gcr.kernel");
    SimilarityKernel k = SimilarityKernel::parse(j.at("name").get<std::string>());
    if (j.contains("gamma")) k.gamma = j.at("gamma").get<double>();
    if (j.contains("degree")) k.degree = j.at("degree").get<int>();
    if (j.contains("offset")) k.offset = j.at("offset").get<double>();
    if (j.contains("scale")) k.scale = j.at("scale").get<double>();
    k.validate();
    return k;
}

inline GCRConfig parse_gcr(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"enabled", "placement", "taps", "scheme", "kernel", "lambda", "tau",
                         "beta", "normalize_pairs"},
                        "gcr");
    GCRConfig g;
    g.enabled = j.value("enabled", true);
    if (j.contains("placement")) g.placement = parse_placement(j.at("placement").get<std::string>());
    if (j.contains("taps")) g.explicit_taps = j.at("taps").get<std::vector<std::size_t>>();
    if (j.contains("scheme")) g.scheme = parse_scheme(j.at("scheme").get<std::string>());
    if (j.contains("kernel")) g.kernel = parse_kernel_json(j.at("kernel"));
    g.lambda = j.value("lambda", g.lambda);
    g.tau = j.value("tau", g.tau);
    g.beta = j.value("beta", g.beta);
    g.normalize_pairs = j.value("normalize_pairs", g.normalize_pairs);
    g.validate();
    return g;
}

inline TrainConfig parse_train(const nlohmann::json& j, const std::string& preset) {
    TrainConfig t = preset == "paper" ? TrainConfig::paper_preset() : TrainConfig::desk_preset();
    reject_unknown_keys(j,
                        {"preset", "epochs", "base_lr", "decay_factor", "decay_epochs",
                         "momentum", "weight_decay", "batch"},
                        "train");
    t.epochs = j.value("epochs", t.epochs);
    t.base_lr = j.value("base_lr", t.base_lr);
    t.decay_factor = j.value("decay_factor", t.decay_factor);
    if (j.contains("decay_epochs"))
        t.decay_epochs = j.at("decay_epochs").get<std::vector<std::size_t>>();
    t.momentum = j.value("momentum", t.momentum);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    if (j.contains("batch")) {
        reject_unknown_keys(j.at("batch"), {"size", "drop_last"}, "train.batch");
        t.batch.n = j.at("batch").value("size", t.batch.n);
        t.batch.drop_last = j.at("batch").value("drop_last", t.batch.drop_last);
    }
    return t;
}

}  // namespace detail

struct ManifestOverrides {
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::string> out_dir;
    std::optional<std::string> preset;
};

inline RunManifest parse_manifest_json(const nlohmann::json& doc,
                                       const ManifestOverrides& overrides = {}) {
    detail::reject_unknown_keys(doc, {"network", "dataset", "train", "gcr", "out", "seeds"},
                                "manifest");
    RunManifest m;
    std::string preset = "desk";
    if (doc.contains("train") && doc.at("train").contains("preset"))
        preset = doc.at("train").at("preset").get<std::string>();
    if (overrides.preset) preset = *overrides.preset;
    if (preset != "desk" && preset != "paper")
        throw ConfigError("preset must be 'desk' or 'paper', got '" + preset + "'");
    m.preset = preset;

    m.network = detail::parse_network(doc.at("network"));
    m.dataset = detail::parse_dataset(doc.at("dataset"));
    m.train = doc.contains("train") ? detail::parse_train(doc.at("train"), preset)
                                    : (preset == "paper" ? TrainConfig::paper_preset()
                                                         : TrainConfig::desk_preset());
    if (doc.contains("gcr")) m.train.gcr = detail::parse_gcr(doc.at("gcr"));
    if (doc.contains("out")) m.out_dir = doc.at("out").get<std::string>();
    if (doc.contains("seeds")) m.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    if (overrides.seeds) m.seeds = *overrides.seeds;
    if (overrides.out_dir) m.out_dir = *overrides.out_dir;
    if (m.seeds.empty()) throw ConfigError("manifest: seed list is empty");
    m.train.validate();
    return m;
}

inline RunManifest parse_manifest(const std::string& path,
                                  const ManifestOverrides& overrides = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    try {
        return parse_manifest_json(doc, overrides);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

/// Stable hash of the manifest minus the seed list; stamped into run records.
inline std::string manifest_hash(const RunManifest& m) {
    nlohmann::ordered_json doc;
    doc["network"] = network_spec_to_json(m.network);
    doc["preset"] = m.preset;
    doc["train"] = {{"epochs", m.train.epochs},
                    {"base_lr", m.train.base_lr},
                    {"decay_factor", m.train.decay_factor},
                    {"decay_epochs", m.train.decay_epochs},
                    {"momentum", m.train.momentum},
                    {"weight_decay", m.train.weight_decay},
                    {"batch_size", m.train.batch.n},
                    {"drop_last", m.train.batch.drop_last}};
    doc["gcr"] = {{"enabled", m.train.gcr.enabled},
                  {"placement", placement_name(m.train.gcr.placement)},
                  {"scheme", scheme_name(m.train.gcr.scheme)},
                  {"kernel", m.train.gcr.kernel.name()},
                  {"lambda", m.train.gcr.lambda},
                  {"tau", m.train.gcr.tau},
                  {"beta", m.train.gcr.beta},
                  {"normalize_pairs", m.train.gcr.normalize_pairs}};
    return detail::hash_hex(doc.dump());
}

}  // namespace gcr
