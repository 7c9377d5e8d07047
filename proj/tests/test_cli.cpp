#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "gcr/gcr.hpp"

using namespace gcr;
namespace fs = std::filesystem;

#ifndef GCR_CLI_PATH
#define GCR_CLI_PATH "./gcr_cli"
#endif

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    const auto out_file =
        fs::temp_directory_path() / ("gcr_cli_out_" + std::to_string(counter++) + ".txt");
    const std::string cmd =
        std::string(GCR_CLI_PATH) + " " + args + " > " + out_file.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    CliResult res;
    res.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(out_file);
    std::stringstream ss;
    ss << in.rdbuf();
    res.output = ss.str();
    return res;
}

fs::path fresh_dir(const std::string& name) {
    static int counter = 0;
    const auto dir =
        fs::temp_directory_path() / ("gcr_cli_tests_" + std::to_string(counter++) + "_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

nlohmann::ordered_json tiny_manifest(const std::string& out_dir, double lambda = 1.0) {
    nlohmann::ordered_json doc;
    doc["network"] = {{"input", {2}},
                      {"classes", 3},
                      {"layers",
                       {{{"kind", "dense"}, {"out", 8}},
                        {{"kind", "relu"}},
                        {{"kind", "dense"}, {"out", 8}},
                        {{"kind", "relu"}},
                        {{"kind", "dense"}, {"out", 3}}}}};
    doc["dataset"] = {{"type", "blobs"}, {"classes", 3},   {"per_class", 20},
                      {"dim", 2},        {"sigma", 0.8},   {"test_per_class", 10}};
    doc["train"] = {{"epochs", 3},
                    {"decay_epochs", nlohmann::json::array()},
                    {"batch", {{"size", 16}}}};
    doc["gcr"] = {{"placement", "late"},
                  {"scheme", "adaptive"},
                  {"lambda", lambda},
                  {"normalize_pairs", true}};
    doc["out"] = out_dir;
    doc["seeds"] = {1};
    return doc;
}

std::string write_manifest(const nlohmann::ordered_json& doc, const fs::path& dir,
                           const std::string& name = "manifest.json") {
    const auto path = dir / name;
    std::ofstream out(path);
    out << doc.dump(2);
    return path.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("cli train: valid manifest exits 0 and writes records") {
    const auto dir = fresh_dir("train_ok");
    const auto cfg = write_manifest(tiny_manifest((dir / "runs").string()), dir);
    auto res = run_cli("train --config " + cfg);
    CHECK(res.exit_code == 0);
    CHECK(fs::exists(dir / "runs/seed_1/record.csv"));
    CHECK(fs::exists(dir / "runs/seed_1/summary.json"));
    CHECK(fs::exists(dir / "runs/seed_1/checkpoint.json"));
}

TEST_CASE("cli train: unknown config key exits 2 naming the key") {
    const auto dir = fresh_dir("train_badkey");
    auto doc = tiny_manifest((dir / "runs").string());
    doc["gcr"]["lambda_schedule"] = "warmup";
    const auto cfg = write_manifest(doc, dir);
    auto res = run_cli("train --config " + cfg);
    CHECK(res.exit_code == 2);
    CHECK(res.output.find("lambda_schedule") != std::string::npos);
}

TEST_CASE("cli train: lambda 0 records an identically-zero gcr column") {
    const auto dir = fresh_dir("train_l0");
    const auto cfg = write_manifest(tiny_manifest((dir / "runs").string(), 0.0), dir);
    auto res = run_cli("train --config " + cfg);
    REQUIRE(res.exit_code == 0);
    std::ifstream in(dir / "runs/seed_1/record.csv");
    std::string header, line;
    std::getline(in, header);
    // locate the gcr column
    std::size_t gcr_col = 0;
    {
        std::stringstream hs(header);
        std::string cell;
        std::size_t idx = 0;
        while (std::getline(hs, cell, ',')) {
            if (cell == "gcr") gcr_col = idx;
            ++idx;
        }
        REQUIRE(gcr_col > 0);
    }
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        std::stringstream ls(line);
        std::string cell;
        for (std::size_t idx = 0; idx <= gcr_col; ++idx) std::getline(ls, cell, ',');
        CHECK(cell == "0");
        ++rows;
    }
    CHECK(rows == 3);
}

TEST_CASE("cli train: divergence exits 3 with a partial record") {
    const auto dir = fresh_dir("train_div");
    auto doc = tiny_manifest((dir / "runs").string());
    doc["train"]["epochs"] = 10;
    doc["train"]["base_lr"] = 1e18;
    const auto cfg = write_manifest(doc, dir);
    auto res = run_cli("train --config " + cfg);
    CHECK(res.exit_code == 3);
    CHECK(res.output.find("DIVERGED") != std::string::npos);
    CHECK(fs::exists(dir / "runs/seed_1/record.csv"));
}

TEST_CASE("cli train is byte-identical across reruns") {
    const auto dir = fresh_dir("train_idem");
    auto doc_a = tiny_manifest((dir / "a").string());
    auto doc_b = tiny_manifest((dir / "b").string());
    const auto cfg_a = write_manifest(doc_a, dir, "a.json");
    const auto cfg_b = write_manifest(doc_b, dir, "b.json");
    REQUIRE(run_cli("train --config " + cfg_a).exit_code == 0);
    REQUIRE(run_cli("train --config " + cfg_b).exit_code == 0);
    CHECK(slurp(dir / "a/seed_1/record.csv") == slurp(dir / "b/seed_1/record.csv"));
    CHECK(slurp(dir / "a/seed_1/summary.json") == slurp(dir / "b/seed_1/summary.json"));
    CHECK(slurp(dir / "a/seed_1/checkpoint.json") == slurp(dir / "b/seed_1/checkpoint.json"));
}

TEST_CASE("cli sweep: placement axis emits the seven configurations") {
    const auto dir = fresh_dir("sweep_placement");
    auto doc = tiny_manifest((dir / "runs").string());
    doc["train"]["epochs"] = 2;
    doc["dataset"]["per_class"] = 12;
    const auto cfg = write_manifest(doc, dir);
    auto res = run_cli("sweep --config " + cfg + " --axis placement --workers 4");
    REQUIRE(res.exit_code == 0);
    std::ifstream in(dir / "runs/sweep_summary.csv");
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::string> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(line);
    REQUIRE(rows.size() == 7);
    const std::vector<std::string> expected{"early",    "mid",      "late", "early+mid",
                                            "mid+late", "early+late", "full"};
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(rows[i].find("placement," + expected[i] + ",") == 0);
        CHECK(rows[i].find(",ok") != std::string::npos);
    }
}

TEST_CASE("cli sweep: scheme axis emits all seven schemes") {
    const auto dir = fresh_dir("sweep_scheme");
    auto doc = tiny_manifest((dir / "runs").string());
    doc["train"]["epochs"] = 2;
    doc["dataset"]["per_class"] = 12;
    const auto cfg = write_manifest(doc, dir);
    auto res = run_cli("sweep --config " + cfg + " --axis scheme --workers 4");
    REQUIRE(res.exit_code == 0);
    std::ifstream in(dir / "runs/sweep_summary.csv");
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 7);
    // weight trajectories recorded per scheme
    CHECK(fs::exists(dir / "runs/scheme_linear/seed_1/record.csv"));
    std::string header;
    std::ifstream rec(dir / "runs/scheme_linear/seed_1/record.csv");
    std::getline(rec, header);
    CHECK(header.find("_weight") != std::string::npos);
}

TEST_CASE("cli sweep: lambda 0 row equals a GCL-free baseline") {
    const auto dir = fresh_dir("sweep_lambda");
    auto doc = tiny_manifest((dir / "runs").string());
    const auto cfg = write_manifest(doc, dir);
    auto res = run_cli("sweep --config " + cfg + " --axis lambda --values 0,0.5,1");
    REQUIRE(res.exit_code == 0);

    // a separate no-GCL run with the same seed
    auto baseline = tiny_manifest((dir / "baseline").string());
    baseline["gcr"] = {{"enabled", false}};
    const auto bl_cfg = write_manifest(baseline, dir, "baseline.json");
    REQUIRE(run_cli("train --config " + bl_cfg).exit_code == 0);

    nlohmann::json bl_summary =
        nlohmann::json::parse(slurp(dir / "baseline/seed_1/summary.json"));
    nlohmann::json l0_summary =
        nlohmann::json::parse(slurp(dir / "runs/lambda_0/seed_1/summary.json"));
    CHECK(bl_summary["final"]["test_acc"] == l0_summary["final"]["test_acc"]);
    CHECK(bl_summary["final"]["ce"] == l0_summary["final"]["ce"]);

    std::ifstream in(dir / "runs/sweep_summary.csv");
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("cli diagnose: reports all metric families and is idempotent") {
    const auto dir = fresh_dir("diagnose");
    auto doc = tiny_manifest((dir / "runs").string());
    doc["dataset"]["sigma"] = 0.4;
    doc["train"]["epochs"] = 6;
    const auto cfg = write_manifest(doc, dir);
    REQUIRE(run_cli("train --config " + cfg).exit_code == 0);

    const std::string ckpt = (dir / "runs/seed_1/checkpoint.json").string();
    const std::string rdir = (dir / "diag").string();
    auto res = run_cli("diagnose --config " + cfg + " --record " + rdir + " --checkpoint " + ckpt);
    REQUIRE(res.exit_code == 0);

    nlohmann::json rep = nlohmann::json::parse(slurp(fs::path(rdir) / "report.json"));
    CHECK(rep.contains("silhouette"));
    CHECK(rep.contains("sep_ratio"));
    CHECK(rep.contains("mean_confidence"));
    CHECK(rep.contains("confusion"));
    CHECK(rep.contains("intra_variance"));
    CHECK(rep.contains("inter_variance"));
    CHECK(rep.contains("spectral"));
    CHECK(fs::exists(fs::path(rdir) / "graph_feature.json"));
    CHECK(fs::exists(fs::path(rdir) / "graph_prediction.json"));
    CHECK(fs::exists(fs::path(rdir) / "penultimate_features.csv"));

    const std::string first = slurp(fs::path(rdir) / "report.json");
    REQUIRE(run_cli("diagnose --config " + cfg + " --record " + rdir + " --checkpoint " + ckpt)
                .exit_code == 0);
    CHECK(slurp(fs::path(rdir) / "report.json") == first);

    auto missing = run_cli("diagnose --config " + cfg + " --record " + rdir +
                           " --checkpoint /nonexistent.json");
    CHECK(missing.exit_code == 2);
}

TEST_CASE("cli diagnose: perfect classifier produces the identity confusion") {
    const auto dir = fresh_dir("diagnose_perfect");
    auto doc = tiny_manifest((dir / "runs").string());
    doc["dataset"]["sigma"] = 0.05;  // trivially separable blobs
    doc["train"]["epochs"] = 8;
    const auto cfg = write_manifest(doc, dir);
    REQUIRE(run_cli("train --config " + cfg).exit_code == 0);
    const std::string ckpt = (dir / "runs/seed_1/checkpoint.json").string();
    const std::string rdir = (dir / "diag").string();
    REQUIRE(run_cli("diagnose --config " + cfg + " --record " + rdir + " --checkpoint " + ckpt)
                .exit_code == 0);
    nlohmann::json rep = nlohmann::json::parse(slurp(fs::path(rdir) / "report.json"));
    const auto confusion = rep["confusion"];
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(confusion[i][j].get<double>() == (i == j ? 1.0 : 0.0));
}

TEST_CASE("cli export-graph writes a thresholded node-link file") {
    const auto dir = fresh_dir("export");
    const auto cfg = write_manifest(tiny_manifest((dir / "runs").string()), dir);
    REQUIRE(run_cli("train --config " + cfg).exit_code == 0);
    const std::string ckpt = (dir / "runs/seed_1/checkpoint.json").string();
    const std::string gpath = (dir / "graph.json").string();
    const std::string dpath = (dir / "graph.dot").string();
    auto res = run_cli("export-graph --config " + cfg + " --checkpoint " + ckpt +
                       " --graph-out " + gpath + " --dot " + dpath + " --threshold 0.5");
    REQUIRE(res.exit_code == 0);
    auto parsed = parse_graph(gpath);
    CHECK_FALSE(parsed.nodes.empty());
    for (const auto& e : parsed.edges) CHECK(e.weight >= 0.5);
    CHECK(fs::exists(dpath));
}

TEST_CASE("cli gradcheck: toy manifests pass, oversized exits 2") {
    const auto dir = fresh_dir("gradcheck");
    auto doc = tiny_manifest((dir / "runs").string());
    doc["network"]["layers"] = {{{"kind", "dense"}, {"out", 16}},
                                {{"kind", "relu"}},
                                {{"kind", "dense"}, {"out", 16}},
                                {{"kind", "relu"}},
                                {{"kind", "dense"}, {"out", 3}}};
    doc["gcr"] = {{"placement", "full"}, {"scheme", "adaptive"}, {"lambda", 1.0}};
    doc["train"]["batch"] = {{"size", 8}};
    const auto cfg = write_manifest(doc, dir);
    auto res = run_cli("gradcheck --config " + cfg);
    CHECK(res.exit_code == 0);
    CHECK(res.output.find("gradcheck OK") != std::string::npos);

    // lambda = 0: cross-entropy path alone still passes
    auto l0 = tiny_manifest((dir / "runs0").string(), 0.0);
    const auto cfg0 = write_manifest(l0, dir, "l0.json");
    CHECK(run_cli("gradcheck --config " + cfg0).exit_code == 0);

    auto big = tiny_manifest((dir / "runs_big").string());
    big["network"]["layers"] = {{{"kind", "dense"}, {"out", 256}},
                                {{"kind", "relu"}},
                                {{"kind", "dense"}, {"out", 256}},
                                {{"kind", "relu"}},
                                {{"kind", "dense"}, {"out", 3}}};
    const auto cfg_big = write_manifest(big, dir, "big.json");
    auto res_big = run_cli("gradcheck --config " + cfg_big);
    CHECK(res_big.exit_code == 2);
}

TEST_CASE("gradcheck failure semantics map to exit 1") {
    // an impossibly tight tolerance forces the failure path through the same
    // machinery the CLI uses
    const auto dir = fresh_dir("gradcheck_fail");
    const auto cfg = write_manifest(tiny_manifest((dir / "runs").string()), dir);
    RunManifest m = parse_manifest(cfg);
    std::ostringstream log;
    CHECK(cmd_gradcheck(m, log, 1e-5, 1e-18) == exit_check_failed);
    CHECK(cmd_gradcheck(m, log) == exit_ok);
}

TEST_CASE("cli rejects missing config and bad files") {
    auto res = run_cli("train --config /nonexistent/manifest.json");
    CHECK(res.exit_code == 2);

    const auto dir = fresh_dir("badjson");
    const auto path = dir / "manifest.json";
    std::ofstream(path) << "{ not json";
    CHECK(run_cli("train --config " + path.string()).exit_code == 2);

    // referenced dataset files must exist at parse time
    auto doc = tiny_manifest((dir / "runs").string());
    doc["dataset"] = {{"type", "csv"},
                      {"path", (dir / "missing.csv").string()},
                      {"test_path", (dir / "missing.csv").string()}};
    const auto cfg = write_manifest(doc, dir);
    auto res2 = run_cli("train --config " + cfg);
    CHECK(res2.exit_code == 2);
    CHECK(res2.output.find("missing.csv") != std::string::npos);
}

TEST_CASE("cli seeds and preset overrides") {
    const auto dir = fresh_dir("overrides");
    auto doc = tiny_manifest((dir / "runs").string());
    const auto cfg = write_manifest(doc, dir);
    auto res = run_cli("train --config " + cfg + " --seeds 3,4");
    REQUIRE(res.exit_code == 0);
    CHECK(fs::exists(dir / "runs/seed_3/record.csv"));
    CHECK(fs::exists(dir / "runs/seed_4/record.csv"));
    CHECK_FALSE(fs::exists(dir / "runs/seed_1/record.csv"));

    auto bad_preset = run_cli("train --config " + cfg + " --preset warp");
    CHECK(bad_preset.exit_code == 2);
}
