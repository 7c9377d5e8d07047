// Command-line surface for the GCR training engine: train, sweep, diagnose,
// export-graph, gradcheck. Exit codes: 0 success, 1 check failure,
// 2 configuration error, 3 divergence.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gcr/gcr.hpp"

namespace {

gcr::ManifestOverrides make_overrides(const std::vector<std::uint64_t>& seeds,
                                      const std::string& out_dir, const std::string& preset) {
    gcr::ManifestOverrides ov;
    if (!seeds.empty()) ov.seeds = seeds;
    if (!out_dir.empty()) ov.out_dir = out_dir;
    if (!preset.empty()) ov.preset = preset;
    return ov;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph consistency regularization training engine"};
    app.require_subcommand(1);

    std::string config_path, out_dir, preset;
    std::vector<std::uint64_t> seeds;
    std::size_t workers = 1;

    auto add_common = [&](CLI::App* cmd, bool config_required = true) {
        auto* opt = cmd->add_option("--config", config_path, "manifest file (JSON)");
        if (config_required) opt->required();
        cmd->add_option("--seeds", seeds, "seed list override")->delimiter(',');
        cmd->add_option("--out", out_dir, "output directory override");
        cmd->add_option("--preset", preset, "training preset: paper|desk");
    };

    auto* train_cmd = app.add_subcommand("train", "train one run per seed");
    add_common(train_cmd);

    auto* sweep_cmd = app.add_subcommand("sweep", "sweep an axis across seeds");
    add_common(sweep_cmd);
    std::string axis;
    std::vector<std::string> values;
    sweep_cmd->add_option("--axis", axis, "placement|scheme|lambda")->required();
    sweep_cmd->add_option("--values", values, "axis values (defaults for placement/scheme)")
        ->delimiter(',');
    sweep_cmd->add_option("--workers", workers, "concurrent sweep cells");

    auto* diag_cmd = app.add_subcommand("diagnose", "metric suite for a checkpoint");
    add_common(diag_cmd);
    std::string record_dir, checkpoint;
    diag_cmd->add_option("--record", record_dir, "directory for report artifacts")->required();
    diag_cmd->add_option("--checkpoint", checkpoint, "checkpoint to analyze")->required();

    auto* export_cmd = app.add_subcommand("export-graph", "thresholded node-link export");
    add_common(export_cmd);
    double threshold = 0.4;
    std::string graph_out = "graph.json", dot_out;
    export_cmd->add_option("--checkpoint", checkpoint, "checkpoint to analyze")->required();
    export_cmd->add_option("--threshold", threshold, "minimum edge similarity (default 0.4)");
    export_cmd->add_option("--graph-out", graph_out, "node-link output file");
    export_cmd->add_option("--dot", dot_out, "optional DOT output file");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference audit of the objective");
    add_common(grad_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return gcr::exit_config_error;
    }

    try {
        const gcr::RunManifest manifest =
            gcr::parse_manifest(config_path, make_overrides(seeds, out_dir, preset));
        if (*train_cmd) return gcr::cmd_train(manifest, std::cout);
        if (*sweep_cmd) return gcr::cmd_sweep(manifest, axis, values, workers, std::cout);
        if (*diag_cmd) return gcr::cmd_diagnose(manifest, record_dir, checkpoint, std::cout);
        if (*export_cmd)
            return gcr::cmd_export_graph(manifest, checkpoint, threshold, graph_out, dot_out,
                                         std::cout);
        if (*grad_cmd) return gcr::cmd_gradcheck(manifest, std::cout);
    } catch (const gcr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return gcr::exit_config_error;
    } catch (const gcr::SpecificationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return gcr::exit_config_error;
    } catch (const gcr::DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return gcr::exit_divergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return gcr::exit_config_error;
    }
    return gcr::exit_config_error;
}
