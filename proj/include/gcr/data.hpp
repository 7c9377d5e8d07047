#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "gcr/errors.hpp"
#include "gcr/random.hpp"
#include "gcr/tensor.hpp"

namespace gcr {

// ---------------------------------------------------------------------------
// dataset container
// ---------------------------------------------------------------------------

struct LabeledDataset {
    Shape sample_shape;            // per-sample shape
    std::vector<double> features;  // N × numel(sample_shape), row-major
    std::vector<int> labels;       // N ids in [0, classes)
    std::size_t classes = 0;
    std::string provenance;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_size() const { return numel(sample_shape); }

    void validate() const {
        if (features.size() != size() * sample_size())
            throw ContractError("dataset: feature buffer does not match N x sample shape");
        if (size() < classes)
            throw ContractError("dataset: fewer samples than classes");
        for (int l : labels)
            if (l < 0 || static_cast<std::size_t>(l) >= classes)
                throw ContractError("dataset: label " + std::to_string(l) + " outside [0, " +
                                    std::to_string(classes) + ")");
    }

    /// Materializes the selected samples as a constant batch tensor of shape
    /// [n, sample_shape...] plus their labels.
    std::pair<Tensor, std::vector<int>> gather_batch(const std::vector<std::size_t>& idx) const {
        const std::size_t ss = sample_size();
        Shape shape = sample_shape;
        shape.insert(shape.begin(), idx.size());
        std::vector<double> buf(idx.size() * ss);
        std::vector<int> lab(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(idx[r] * ss), ss,
                        buf.begin() + static_cast<std::ptrdiff_t>(r * ss));
            lab[r] = labels[idx[r]];
        }
        return {Tensor::from(std::move(shape), std::move(buf), false), std::move(lab)};
    }
};

// ---------------------------------------------------------------------------
// synthetic generators
// ---------------------------------------------------------------------------

/// Gaussian class blobs: class means on a circle of radius 3 in the first
/// two dimensions (zeros elsewhere), isotropic noise of scale sigma.
inline LabeledDataset gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t d,
                                     double sigma, std::uint64_t seed) {
    if (classes < 2) throw ConfigError("gaussian_blobs: need C >= 2");
    if (per_class < 1) throw ConfigError("gaussian_blobs: need per_class >= 1");
    if (!(sigma > 0.0)) throw ConfigError("gaussian_blobs: sigma must be > 0");
    if (d < 1) throw ConfigError("gaussian_blobs: need d >= 1");

    RandomStream rng(seed);
    LabeledDataset ds;
    ds.sample_shape = {d};
    ds.classes = classes;
    ds.features.reserve(classes * per_class * d);
    ds.labels.reserve(classes * per_class);
    for (std::size_t c = 0; c < classes; ++c) {
        const double angle =
            2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        std::vector<double> mean(d, 0.0);
        mean[0] = 3.0 * std::cos(angle);
        if (d > 1) mean[1] = 3.0 * std::sin(angle);
        for (std::size_t s = 0; s < per_class; ++s) {
            for (std::size_t t = 0; t < d; ++t)
                ds.features.push_back(mean[t] + sigma * rng.normal());
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    std::ostringstream os;
    os << "gaussian_blobs(C=" << classes << ",per_class=" << per_class << ",d=" << d
       << ",sigma=" << sigma << ",seed=" << seed << ")";
    ds.provenance = os.str();
    return ds;
}

/// Two concentric rings (radii 1 and 2) with radial Gaussian noise.
inline LabeledDataset two_rings(std::size_t per_class, double noise, std::uint64_t seed) {
    if (per_class < 1) throw ConfigError("two_rings: need per_class >= 1");
    if (!(noise >= 0.0)) throw ConfigError("two_rings: noise must be >= 0");

    RandomStream rng(seed);
    LabeledDataset ds;
    ds.sample_shape = {2};
    ds.classes = 2;
    for (int c = 0; c < 2; ++c) {
        const double base = c == 0 ? 1.0 : 2.0;
        for (std::size_t s = 0; s < per_class; ++s) {
            const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const double r = base + noise * rng.normal();
            ds.features.push_back(r * std::cos(theta));
            ds.features.push_back(r * std::sin(theta));
            ds.labels.push_back(c);
        }
    }
    std::ostringstream os;
    os << "two_rings(per_class=" << per_class << ",noise=" << noise << ",seed=" << seed << ")";
    ds.provenance = os.str();
    return ds;
}

// ---------------------------------------------------------------------------
// IDX ingestion (MNIST-style binary corpora)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated file: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

/// Reads an IDX image/label pair. Pixels are scaled to [0,1] and shaped
/// N×1×H×W; class count is max label + 1.
inline LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open " + labels_path);

    const std::uint32_t img_magic = detail::read_be_u32(img, images_path);
    if (img_magic != 0x00000803u)
        throw FormatError("bad image magic in " + images_path + ": got " +
                          std::to_string(img_magic) + ", want 2051");
    const std::uint32_t lab_magic = detail::read_be_u32(lab, labels_path);
    if (lab_magic != 0x00000801u)
        throw FormatError("bad label magic in " + labels_path + ": got " +
                          std::to_string(lab_magic) + ", want 2049");

    const std::uint32_t n_img = detail::read_be_u32(img, images_path);
    const std::uint32_t h = detail::read_be_u32(img, images_path);
    const std::uint32_t w = detail::read_be_u32(img, images_path);
    const std::uint32_t n_lab = detail::read_be_u32(lab, labels_path);
    if (n_img != n_lab)
        throw FormatError("count mismatch: " + std::to_string(n_img) + " images vs " +
                          std::to_string(n_lab) + " labels");

    LabeledDataset ds;
    ds.sample_shape = {1, h, w};
    ds.features.resize(std::size_t(n_img) * h * w);
    ds.labels.resize(n_img);

    std::vector<unsigned char> row(std::size_t(h) * w);
    for (std::uint32_t i = 0; i < n_img; ++i) {
        img.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!img) throw IoError("truncated file: " + images_path);
        for (std::size_t p = 0; p < row.size(); ++p)
            ds.features[std::size_t(i) * row.size() + p] = row[p] / 255.0;
    }
    int max_label = 0;
    for (std::uint32_t i = 0; i < n_lab; ++i) {
        char c;
        lab.read(&c, 1);
        if (!lab) throw IoError("truncated file: " + labels_path);
        ds.labels[i] = static_cast<unsigned char>(c);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = static_cast<std::size_t>(max_label) + 1;
    ds.provenance = "idx(" + images_path + "," + labels_path + ")";
    return ds;
}

/// Writes a single-channel dataset with values in [0,1] as an IDX pair
/// (pixels quantized to bytes). Useful for fixture generation.
inline void save_idx(const LabeledDataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
    if (ds.sample_shape.size() != 3 || ds.sample_shape[0] != 1)
        throw ContractError("save_idx: expects [1,h,w] samples");
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot write " + images_path);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot write " + labels_path);

    const std::uint32_t n = static_cast<std::uint32_t>(ds.size());
    const std::uint32_t h = static_cast<std::uint32_t>(ds.sample_shape[1]);
    const std::uint32_t w = static_cast<std::uint32_t>(ds.sample_shape[2]);
    detail::write_be_u32(img, 0x00000803u);
    detail::write_be_u32(img, n);
    detail::write_be_u32(img, h);
    detail::write_be_u32(img, w);
    for (double v : ds.features) {
        const double q = std::clamp(v, 0.0, 1.0) * 255.0;
        const unsigned char b = static_cast<unsigned char>(q + 0.5);
        img.write(reinterpret_cast<const char*>(&b), 1);
    }
    detail::write_be_u32(lab, 0x00000801u);
    detail::write_be_u32(lab, n);
    for (int l : ds.labels) {
        const unsigned char b = static_cast<unsigned char>(l);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Loads a rectangular numeric CSV with a header row. Feature columns keep
/// file order; the label column maps to dense ids in first-appearance
/// order, recorded in the provenance string.
inline LabeledDataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);

    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        return cells;
    };

    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size())
        throw ConfigError(path + ": label column '" + label_column + "' not found");

    LabeledDataset ds;
    const std::size_t d = header.size() - 1;
    ds.sample_shape = {d};
    std::vector<std::string> label_names;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != header.size())
            throw FormatError(path + ": row " + std::to_string(line_no) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(header.size()));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i == label_idx) {
                std::size_t id = label_names.size();
                for (std::size_t k = 0; k < label_names.size(); ++k)
                    if (label_names[k] == cells[i]) id = k;
                if (id == label_names.size()) label_names.push_back(cells[i]);
                ds.labels.push_back(static_cast<int>(id));
            } else {
                char* end = nullptr;
                const double v = std::strtod(cells[i].c_str(), &end);
                if (end == cells[i].c_str() || *end != '\0')
                    throw FormatError(path + ": row " + std::to_string(line_no) +
                                      ": non-numeric cell '" + cells[i] + "'");
                ds.features.push_back(v);
            }
        }
    }
    ds.classes = label_names.size();
    std::ostringstream os;
    os << "csv(" << path << ",label=" << label_column << ",map=";
    for (std::size_t i = 0; i < label_names.size(); ++i)
        os << (i ? ";" : "") << label_names[i] << "->" << i;
    os << ")";
    ds.provenance = os.str();
    ds.validate();
    return ds;
}

/// Writes features plus the label ids with full double precision; reloading
/// reproduces the dataset exactly (ids are emitted in first-appearance
/// order already).
inline void save_csv(const LabeledDataset& ds, const std::string& path,
                     const std::string& label_column = "label") {
    if (ds.sample_shape.size() != 1)
        throw ContractError("save_csv: expects flat feature vectors");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    const std::size_t d = ds.sample_shape[0];
    for (std::size_t i = 0; i < d; ++i) out << "f" << i << ",";
    out << label_column << "\n";
    char buf[40];
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t i = 0; i < d; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", ds.features[r * d + i]);
            out << buf << ",";
        }
        out << ds.labels[r] << "\n";
    }
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

struct BatchPlan {
    std::size_t n = 128;
    std::uint64_t shuffle_seed = 0;
    bool drop_last = false;

    void validate() const {
        if (n < 2) throw ConfigError("batch size must be >= 2 (pairwise graphs need a pair)");
    }
};

/// Seeded shuffle of the index range partitioned into consecutive batches.
/// The trailing short batch is dropped iff drop_last is set or it has fewer
/// than 2 samples.
inline std::vector<std::vector<std::size_t>> batches(const LabeledDataset& ds,
                                                     const BatchPlan& plan) {
    plan.validate();
    const std::size_t n_total = ds.size();
    if (plan.n > n_total)
        throw ConfigError("batch size " + std::to_string(plan.n) + " exceeds dataset size " +
                          std::to_string(n_total));
    std::vector<std::size_t> order(n_total);
    for (std::size_t i = 0; i < n_total; ++i) order[i] = i;
    RandomStream rng(plan.shuffle_seed);
    for (std::size_t i = n_total; i > 1; --i) {  // Fisher-Yates
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(order[i - 1], order[j]);
    }
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n_total; start += plan.n) {
        const std::size_t len = std::min(plan.n, n_total - start);
        if (len < plan.n && (plan.drop_last || len < 2)) break;
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + len));
    }
    return out;
}

}  // namespace gcr
