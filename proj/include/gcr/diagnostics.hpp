#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcr/errors.hpp"
#include "gcr/graphs.hpp"
#include "gcr/random.hpp"
#include "gcr/tensor.hpp"

namespace gcr {

// ---------------------------------------------------------------------------
// clustering / classification metrics
// ---------------------------------------------------------------------------

/// Mean silhouette over samples with Euclidean distances. Samples in
/// singleton clusters contribute 0.
inline double silhouette(const Tensor& features, const std::vector<int>& labels) {
    if (features.rank() != 2) throw DimensionError("silhouette: expects [N x d]");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (labels.size() != n) throw ContractError("silhouette: label count mismatch");
    if (n < 2) throw ContractError("silhouette: needs N >= 2");
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    const std::size_t c = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> counts(c, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    std::size_t present = 0;
    for (std::size_t k = 0; k < c; ++k)
        if (counts[k] > 0) ++present;
    if (present < 2) throw ContractError("silhouette: needs >= 2 classes present");

    const auto x = features.values();
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = x[i * d + t] - x[j * d + t];
            s += diff * diff;
        }
        return std::sqrt(s);
    };

    double total = 0.0;
    std::vector<double> cluster_dist(c);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t li = static_cast<std::size_t>(labels[i]);
        if (counts[li] == 1) continue;  // singleton contributes 0
        std::fill(cluster_dist.begin(), cluster_dist.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            cluster_dist[static_cast<std::size_t>(labels[j])] += dist(i, j);
        }
        const double a = cluster_dist[li] / static_cast<double>(counts[li] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < c; ++k) {
            if (k == li || counts[k] == 0) continue;
            b = std::min(b, cluster_dist[k] / static_cast<double>(counts[k]));
        }
        const double m = std::max(a, b);
        total += m > 0.0 ? (b - a) / m : 0.0;
    }
    return total / static_cast<double>(n);
}

struct SeparabilityResult {
    double ratio = 0.0;
    bool degenerate = false;  // intra-class mean distance was 0
};

/// Mean inter-class pairwise distance over mean intra-class pairwise
/// distance. All-duplicate intra pairs make the ratio infinite and flag
/// the result degenerate.
inline SeparabilityResult separability_ratio(const Tensor& features,
                                             const std::vector<int>& labels) {
    if (features.rank() != 2) throw DimensionError("separability_ratio: expects [N x d]");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (labels.size() != n) throw ContractError("separability_ratio: label count mismatch");
    const auto x = features.values();

    double intra_sum = 0.0, inter_sum = 0.0;
    std::size_t intra_cnt = 0, inter_cnt = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = x[i * d + t] - x[j * d + t];
                s += diff * diff;
            }
            const double dij = std::sqrt(s);
            if (labels[i] == labels[j]) {
                intra_sum += dij;
                ++intra_cnt;
            } else {
                inter_sum += dij;
                ++inter_cnt;
            }
        }
    if (intra_cnt == 0) throw ContractError("separability_ratio: no intra-class pair exists");
    if (inter_cnt == 0) throw ContractError("separability_ratio: needs >= 2 classes");
    const double intra = intra_sum / static_cast<double>(intra_cnt);
    const double inter = inter_sum / static_cast<double>(inter_cnt);
    if (intra == 0.0)
        return {std::numeric_limits<double>::infinity(), true};
    return {inter / intra, false};
}

/// Mean over samples of the max row probability.
inline double mean_confidence(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2) throw DimensionError("mean_confidence: expects [N x C]");
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    if (labels.size() != n) throw ContractError("mean_confidence: label count mismatch");
    const auto p = probs.values();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0, row_max = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            row_sum += p[i * c + j];
            row_max = std::max(row_max, p[i * c + j]);
        }
        if (std::abs(row_sum - 1.0) > 1e-6)
            throw ContractError("mean_confidence: row " + std::to_string(i) +
                                " is not a distribution (sums to " + std::to_string(row_sum) +
                                ")");
        total += row_max;
    }
    return total / static_cast<double>(n);
}

struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<double> rows;              // row-normalized, C×C
    std::vector<std::uint8_t> supported;   // per row: had any samples

    double at(std::size_t i, std::size_t j) const { return rows[i * classes + j]; }
};

/// entry (i,j) = count(label=i, pred=j)/count(label=i); unsupported rows are
/// all-zero and flagged.
inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                        const std::vector<int>& labels, std::size_t classes) {
    if (preds.size() != labels.size())
        throw ContractError("confusion_matrix: " + std::to_string(preds.size()) +
                            " predictions vs " + std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || static_cast<std::size_t>(preds[i]) >= classes)
            throw ContractError("confusion_matrix: prediction out of range");
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
            throw ContractError("confusion_matrix: label out of range");
    }
    ConfusionMatrix cm;
    cm.classes = classes;
    cm.rows.assign(classes * classes, 0.0);
    cm.supported.assign(classes, 0);
    std::vector<std::size_t> support(classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        cm.rows[static_cast<std::size_t>(labels[i]) * classes +
                static_cast<std::size_t>(preds[i])] += 1.0;
        ++support[static_cast<std::size_t>(labels[i])];
    }
    for (std::size_t r = 0; r < classes; ++r) {
        if (support[r] == 0) continue;
        cm.supported[r] = 1;
        for (std::size_t j = 0; j < classes; ++j)
            cm.rows[r * classes + j] /= static_cast<double>(support[r]);
    }
    return cm;
}

struct IntraInterVariance {
    double intra = 0.0;
    double inter = 0.0;
    std::vector<int> flagged_classes;  // classes with < 2 samples (intra counted 0)
};

/// intra: mean over classes of the trace of the within-class covariance;
/// inter: trace of the covariance of class means around their global mean.
inline IntraInterVariance intra_inter_variance(const Tensor& features,
                                               const std::vector<int>& labels) {
    if (features.rank() != 2) throw DimensionError("intra_inter_variance: expects [N x d]");
    const std::size_t n = features.dim(0), d = features.dim(1);
    if (labels.size() != n) throw ContractError("intra_inter_variance: label count mismatch");
    int max_label = 0;
    for (int l : labels) max_label = std::max(max_label, l);
    const std::size_t c = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::size_t> counts(c, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    std::size_t present = 0;
    for (auto k : counts)
        if (k > 0) ++present;
    if (present < 2) throw ContractError("intra_inter_variance: needs >= 2 classes");

    const auto x = features.values();
    std::vector<double> means(c * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t li = static_cast<std::size_t>(labels[i]);
        for (std::size_t t = 0; t < d; ++t) means[li * d + t] += x[i * d + t];
    }
    for (std::size_t k = 0; k < c; ++k)
        if (counts[k] > 0)
            for (std::size_t t = 0; t < d; ++t) means[k * d + t] /= static_cast<double>(counts[k]);

    IntraInterVariance out;
    double intra_total = 0.0;
    std::size_t class_terms = 0;
    for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] == 0) continue;
        ++class_terms;
        if (counts[k] < 2) {
            out.flagged_classes.push_back(static_cast<int>(k));
            continue;  // within-class variance counted 0
        }
        double tr = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (static_cast<std::size_t>(labels[i]) != k) continue;
            for (std::size_t t = 0; t < d; ++t) {
                const double diff = x[i * d + t] - means[k * d + t];
                tr += diff * diff;
            }
        }
        intra_total += tr / static_cast<double>(counts[k]);
    }
    out.intra = intra_total / static_cast<double>(class_terms);

    // covariance of class means around their global mean
    std::vector<double> global(d, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] == 0) continue;
        for (std::size_t t = 0; t < d; ++t) global[t] += means[k * d + t];
    }
    for (std::size_t t = 0; t < d; ++t) global[t] /= static_cast<double>(present);
    double inter_tr = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] == 0) continue;
        for (std::size_t t = 0; t < d; ++t) {
            const double diff = means[k * d + t] - global[t];
            inter_tr += diff * diff;
        }
    }
    out.inter = inter_tr / static_cast<double>(present);
    return out;
}

// ---------------------------------------------------------------------------
// spectral checks
// ---------------------------------------------------------------------------

enum class DegreeMode { include_diagonal, zero_diagonal };

/// I − D^{−1/2} A D^{−1/2} with D_ii = Σ_j A_ij. The default degree
/// convention includes the stored diagonal entry.
inline std::vector<double> normalized_laplacian(const SimilarityMatrix& a,
                                                DegreeMode mode = DegreeMode::include_diagonal) {
    const std::size_t n = a.n();
    const auto av = a.mat.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (std::abs(av[i * n + j] - av[j * n + i]) > 1e-12)
                throw ContractError("normalized_laplacian: input not symmetric");
    std::vector<double> deg(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (av[i * n + j] < 0.0)
                throw ContractError("normalized_laplacian: negative entry");
            if (mode == DegreeMode::zero_diagonal && i == j) continue;
            deg[i] += av[i * n + j];
        }
    for (std::size_t i = 0; i < n; ++i)
        if (deg[i] == 0.0)
            throw DegenerateInputError("normalized_laplacian: node " + std::to_string(i) +
                                       " has zero degree");
    std::vector<double> l(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double aij = (mode == DegreeMode::zero_diagonal && i == j) ? 0.0 : av[i * n + j];
            l[i * n + j] = (i == j ? 1.0 : 0.0) - aij / std::sqrt(deg[i] * deg[j]);
        }
    return l;
}

struct SpectralResidual {
    double epsilon = 0.0;
    double graph_residual = 0.0;      // ‖F_ε − P‖_F
    double laplacian_residual = 0.0;  // ‖L_{F_ε} − L_P‖_F
};

/// Empirical continuity probe of the normalized-Laplacian map: perturbs P
/// by ε·E for a fixed seeded symmetric unit-Frobenius direction E (result
/// clamped non-negative) and reports both residuals per ε, in increasing
/// ε order. Residuals vanish jointly at ε = 0.
inline std::vector<SpectralResidual> spectral_alignment_check(const SimilarityMatrix& f,
                                                              const SimilarityMatrix& p,
                                                              std::vector<double> epsilons,
                                                              DegreeMode mode = DegreeMode::include_diagonal) {
    (void)f;  // validated by construction; the series perturbs P
    const std::size_t n = p.n();
    std::sort(epsilons.begin(), epsilons.end());
    const std::vector<double> lp = normalized_laplacian(p, mode);

    // fixed seeded symmetric perturbation, unit Frobenius norm
    std::vector<double> e(n * n, 0.0);
    {
        RandomStream rng(20240809u);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                const double v = rng.normal();
                e[i * n + j] = v;
                e[j * n + i] = v;
            }
        double norm = 0.0;
        for (double v : e) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : e) v /= norm;
    }

    std::vector<SpectralResidual> out;
    const auto pv = p.mat.values();
    for (double eps : epsilons) {
        std::vector<double> fe(n * n);
        for (std::size_t i = 0; i < n * n; ++i)
            fe[i] = std::max(0.0, pv[i] + eps * e[i]);
        double frob = 0.0;
        for (std::size_t i = 0; i < n * n; ++i) {
            const double diff = fe[i] - pv[i];
            frob += diff * diff;
        }
        SimilarityMatrix fm{Tensor::from({n, n}, std::move(fe), false), false};
        std::vector<double> lf;
        try {
            lf = normalized_laplacian(fm, mode);
        } catch (const DegenerateInputError&) {
            throw DegenerateInputError(
                "spectral_alignment_check: degree degenerated after clamping at eps=" +
                std::to_string(eps));
        }
        double lres = 0.0;
        for (std::size_t i = 0; i < n * n; ++i) {
            const double diff = lf[i] - lp[i];
            lres += diff * diff;
        }
        out.push_back({eps, std::sqrt(frob), std::sqrt(lres)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// graph export
// ---------------------------------------------------------------------------

/// Node-link export: nodes carry id and class label; undirected edges (i<j)
/// with weight, kept iff A[i][j] >= threshold.
inline void export_graph(const SimilarityMatrix& a, const std::vector<int>& labels,
                         double threshold, const std::string& path) {
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ContractError("export_graph: threshold must be in [0, 1]");
    const std::size_t n = a.n();
    if (labels.size() != n) throw ContractError("export_graph: label count mismatch");

    nlohmann::ordered_json doc;
    doc["nodes"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < n; ++i)
        doc["nodes"].push_back({{"id", i}, {"label", labels[i]}});
    doc["edges"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (a.at(i, j) >= threshold)
                doc["edges"].push_back({{"source", i}, {"target", j}, {"weight", a.at(i, j)}});

    std::ofstream out(path);
    if (!out) throw IoError("export_graph: cannot write " + path);
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("export_graph: write failed for " + path);
}

struct GraphEdge {
    std::size_t source = 0, target = 0;
    double weight = 0.0;
};

struct NodeLinkGraph {
    std::vector<std::pair<std::size_t, int>> nodes;  // id, label
    std::vector<GraphEdge> edges;
};

inline NodeLinkGraph parse_graph(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("parse_graph: cannot open " + path);
    nlohmann::json doc = nlohmann::json::parse(in);
    NodeLinkGraph g;
    for (const auto& node : doc.at("nodes"))
        g.nodes.emplace_back(node.at("id").get<std::size_t>(), node.at("label").get<int>());
    for (const auto& edge : doc.at("edges"))
        g.edges.push_back({edge.at("source").get<std::size_t>(),
                           edge.at("target").get<std::size_t>(),
                           edge.at("weight").get<double>()});
    return g;
}

/// DOT emission with the same edge set as the node-link export.
inline void export_graph_dot(const SimilarityMatrix& a, const std::vector<int>& labels,
                             double threshold, const std::string& path) {
    if (!(threshold >= 0.0 && threshold <= 1.0))
        throw ContractError("export_graph_dot: threshold must be in [0, 1]");
    const std::size_t n = a.n();
    std::ofstream out(path);
    if (!out) throw IoError("export_graph_dot: cannot write " + path);
    out << "graph similarity {\n";
    for (std::size_t i = 0; i < n; ++i)
        out << "  n" << i << " [label=\"" << i << ":c" << labels[i] << "\"];\n";
    char buf[64];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (a.at(i, j) >= threshold) {
                std::snprintf(buf, sizeof buf, "%.6f", a.at(i, j));
                out << "  n" << i << " -- n" << j << " [weight=" << buf << "];\n";
            }
    out << "}\n";
}

// ---------------------------------------------------------------------------
// aggregate report
// ---------------------------------------------------------------------------

struct DiagnosticsReport {
    double silhouette = 0.0;
    double sep_ratio = 0.0;
    bool sep_degenerate = false;
    double mean_confidence = 0.0;
    ConfusionMatrix confusion;
    IntraInterVariance variance;
    std::vector<SpectralResidual> spectral;
    std::size_t feature_layer = 0;  // layer id the feature metrics were computed on
    std::string provenance;
};

}  // namespace gcr
