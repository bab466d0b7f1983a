// Command line front end: one subcommand per pipeline stage plus full runs,
// sweeps and the synthetic fixture.

#include "tissuegraph/config.hpp"
#include "tissuegraph/error.hpp"
#include "tissuegraph/eval.hpp"
#include "tissuegraph/pipeline.hpp"
#include "tissuegraph/synth.hpp"
#include "tissuegraph/artifacts.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
namespace tg = tissuegraph;
namespace pl = tissuegraph::pipeline;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSlideFailures = 1;
constexpr int kExitConfig = 2;

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string out;
};

tg::config::RunConfig resolve(const Globals& g, const std::string& manifest = {}) {
    auto cfg = g.config_path.empty() ? tg::config::RunConfig{} : tg::config::load(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.workers) cfg.workers = *g.workers;
    if (!g.out.empty()) cfg.output_root = g.out;
    if (!manifest.empty()) cfg.manifest = manifest;
    tg::config::validate(cfg);
    return cfg;
}

fs::path out_dir(const Globals& g) {
    const fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(dir);
    return dir;
}

tg::eval::Manifest manifest_of(const tg::config::RunConfig& cfg) {
    if (cfg.manifest.empty()) throw tg::ConfigError("no manifest given (use --manifest or the config file)");
    return tg::eval::read_manifest(cfg.manifest);
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw tg::ConfigError("bad sweep value '" + item + "'");
        }
    }
    return out;
}

int report_run(const pl::RunSummary& s) {
    std::cout << "run directory: " << s.run_dir.string() << "\n";
    for (const auto& slide : s.slides) {
        if (slide.ok) {
            std::cout << "  " << slide.slide_id << ": " << slide.initial_nodes << " -> " << slide.nodes << " nodes\n";
        } else {
            std::cout << "  " << slide.slide_id << ": FAILED " << slide.error << "\n";
        }
    }
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
    if (s.trained) std::cout << pl::format_metric_table(s.metrics);
    return s.failures > 0 ? kExitSlideFailures : kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Interpretable tissue graphs: masking, region graphs, features, GAT training and explanations"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "Run configuration (JSON)");
    app.add_option("--seed", g.seed, "Override the configured seed");
    app.add_option("--workers", g.workers, "Slides processed in parallel");
    app.add_option("--out", g.out, "Output root or directory");

    std::string manifest, image, mask_dir, graph_dir, nuclei, embeddings = "builtin", run_dir, slide, split = "test",
                                                                 predictions, param, values, task;
    double tau = 0, xi = 0;
    int target_class = -1, steps = 0;
    std::vector<std::string> matrices;
    tg::synth::SynthParams synth;
    int size = 96;

    auto* run = app.add_subcommand("run", "Full pipeline over a manifest");
    run->add_option("--manifest", manifest, "Slide manifest CSV");

    auto* mask = app.add_subcommand("mask", "Tissue mask of one image");
    mask->add_option("--image", image)->required();

    auto* graph = app.add_subcommand("graph", "Region graph stages");
    graph->require_subcommand(1);
    graph->fallthrough();
    auto* build = graph->add_subcommand("build", "SLIC superpixels and the initial region graph");
    build->add_option("--image", image)->required();
    build->add_option("--mask-dir", mask_dir, "Directory holding mask.png")->required();
    auto* coarsen = graph->add_subcommand("coarsen", "Embedding-guided region merging");
    coarsen->add_option("--image", image)->required();
    coarsen->add_option("--graph-dir", graph_dir, "Directory holding labels.png and graph.json")->required();
    auto* tau_opt = coarsen->add_option("--tau", tau, "Similarity threshold");
    coarsen->add_option("--embeddings", embeddings, "'builtin' or an embedding file");

    auto* features = app.add_subcommand("features", "Feature stages");
    features->require_subcommand(1);
    features->fallthrough();
    auto* extract = features->add_subcommand("extract", "Catalog features for every node of a coarsened graph");
    extract->add_option("--image", image)->required();
    extract->add_option("--graph-dir", graph_dir)->required();
    extract->add_option("--nuclei", nuclei, "Nuclei instance PNG (types in the .csv beside it)");
    auto* prune = features->add_subcommand("prune", "Correlation pruning over feature matrices");
    auto* xi_opt = prune->add_option("--xi", xi, "Correlation threshold");
    prune->add_option("matrices", matrices, "features.tgfm files")->required();

    auto* train = app.add_subcommand("train", "Pipeline up to model selection and test metrics");
    train->add_option("--manifest", manifest);

    auto* predict = app.add_subcommand("predict", "Class probabilities from a trained run");
    predict->add_option("--run", run_dir)->required();
    predict->add_option("--manifest", manifest);
    predict->add_option("--split", split, "Split to predict ('' for all)");

    auto* explain = app.add_subcommand("explain", "Integrated-gradients explanation of one slide");
    explain->add_option("--run", run_dir)->required();
    explain->add_option("--manifest", manifest);
    explain->add_option("--slide", slide)->required();
    explain->add_option("--class", target_class, "Target class (default: predicted)");
    explain->add_option("--steps", steps, "Interpolation steps");

    auto* evaluate = app.add_subcommand("evaluate", "Metrics of a predictions file");
    evaluate->add_option("--predictions", predictions)->required();
    evaluate->add_option("--task", task, "stage or survival");

    auto* sweep = app.add_subcommand("sweep", "Ablation over tau or xi");
    sweep->add_option("--manifest", manifest);
    sweep->add_option("--param", param)->required()->check(CLI::IsMember({"tau", "xi"}));
    sweep->add_option("--values", values, "Comma separated values")->required();

    auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic benchmark fixture");
    synth_cmd->add_option("--count", synth.count);
    synth_cmd->add_option("--size", size, "Image side in pixels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run || *train) {
            auto cfg = resolve(g, manifest);
            if (*train) cfg.explain.max_slides = 0;
            return report_run(pl::run_pipeline(manifest_of(cfg), cfg));
        }
        if (*mask) {
            pl::mask_stage(image, out_dir(g), resolve(g));
            return kExitOk;
        }
        if (*build) {
            pl::graph_stage(image, mask_dir, out_dir(g), resolve(g));
            return kExitOk;
        }
        if (*coarsen) {
            auto cfg = resolve(g);
            if (*tau_opt) cfg.coarsen.tau = tau;
            tg::config::validate(cfg);
            pl::coarsen_stage(image, graph_dir, embeddings == "builtin" ? fs::path{} : fs::path(embeddings), out_dir(g), cfg);
            return kExitOk;
        }
        if (*extract) {
            pl::features_stage(image, graph_dir, nuclei, out_dir(g), resolve(g));
            return kExitOk;
        }
        if (*prune) {
            auto cfg = resolve(g);
            if (*xi_opt) cfg.features.xi = xi;
            tg::config::validate(cfg);
            std::vector<fs::path> paths(matrices.begin(), matrices.end());
            const auto kept = pl::prune_feature_files(paths, cfg.features.xi);
            const nlohmann::json j = {{"xi", cfg.features.xi}, {"active", kept}};
            tg::artifacts::write_text(out_dir(g) / "features.json", j.dump(2) + "\n");
            std::cout << kept.size() << " features kept\n";
            return kExitOk;
        }
        if (*predict) {
            const auto trained = pl::load_run(run_dir);
            auto cfg = trained.config;
            if (!manifest.empty()) cfg.manifest = manifest;
            const auto rows = pl::predict(trained, manifest_of(cfg), split);
            const auto path = out_dir(g) / "predictions.csv";
            pl::write_predictions(path, rows);
            std::cout << rows.size() << " predictions written to " << path.string() << "\n";
            return kExitOk;
        }
        if (*explain) {
            const auto trained = pl::load_run(run_dir);
            auto cfg = trained.config;
            if (!manifest.empty()) cfg.manifest = manifest;
            const int m = steps > 0 ? steps : cfg.explain.steps;
            const double gap = pl::explain_slide(trained, manifest_of(cfg), slide, target_class, m, out_dir(g));
            std::cout << "completeness gap: " << gap << "\n";
            return kExitOk;
        }
        if (*evaluate) {
            const auto cfg = resolve(g);
            const auto table = pl::evaluate_predictions(pl::read_predictions(predictions), task.empty() ? cfg.eval.task : task);
            std::cout << pl::format_metric_table(table);
            return kExitOk;
        }
        if (*sweep) {
            const auto cfg = resolve(g, manifest);
            const auto table = pl::sweep(manifest_of(cfg), cfg, param, parse_values(values));
            const auto text = pl::format_sweep_table(table);
            tg::artifacts::write_text(cfg.output_root / ("sweep-" + param + ".txt"), text);
            std::cout << text;
            return kExitOk;
        }
        if (*synth_cmd) {
            synth.width = synth.height = size;
            if (g.seed) synth.seed = *g.seed;
            const auto dir = out_dir(g);
            const auto m = tg::synth::generate(dir, synth);
            std::cout << m.slides.size() << " slides written to " << fs::absolute(dir).string() << "\n";
            return kExitOk;
        }
    } catch (const tg::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitSlideFailures;
    }
    return kExitOk;
}
