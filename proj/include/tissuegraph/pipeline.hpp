#pragma once

#include "tissuegraph/config.hpp"
#include "tissuegraph/eval.hpp"
#include "tissuegraph/features.hpp"
#include "tissuegraph/gnn.hpp"
#include "tissuegraph/raster.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tissuegraph::pipeline {

namespace fs = std::filesystem;

// -------------------------------------------------------------- slide stages
// Each stage reads its inputs from files and writes into `out_dir`:
//   mask      mask.png
//   graph     labels.png, graph.json          (initial superpixel graph)
//   coarsen   labels.png, graph.json, trace.json  (labels hold node ids)
//   features  features.tgfm                   (full catalog, graph node order)

/// Image at segmentation scale.
raster::RgbImage segmentation_image(const fs::path& image, const config::RunConfig& cfg);

void mask_stage(const fs::path& image, const fs::path& out_dir, const config::RunConfig& cfg);
void graph_stage(const fs::path& image, const fs::path& mask_dir, const fs::path& out_dir, const config::RunConfig& cfg);
/// `embeddings` empty selects the builtin descriptor.
void coarsen_stage(const fs::path& image, const fs::path& graph_dir, const fs::path& embeddings, const fs::path& out_dir,
                   const config::RunConfig& cfg);
/// `nuclei` empty leaves the nuclear block at zero. The type table is read
/// from the same path with a .csv extension.
void features_stage(const fs::path& image, const fs::path& coarse_dir, const fs::path& nuclei, const fs::path& out_dir,
                    const config::RunConfig& cfg);

/// Names kept by correlation pruning over all rows of the given matrices.
std::vector<std::string> prune_feature_files(const std::vector<fs::path>& matrices, double xi);

/// Nearest-neighbour upscaling of a label map to (width, height).
superpixel::LabelMap upscale_labels(const superpixel::LabelMap& labels, int factor, int width, int height);

// ------------------------------------------------------------------ metrics

struct MetricStat {
    std::string name;
    double mean = 0;
    double stddev = 0;  // sample standard deviation over instances
};

struct MetricTable {
    std::vector<MetricStat> rows;
    const MetricStat* find(const std::string& name) const;
};

/// Named metrics for one model's predictions. Stage task: AUC, F1_m,
/// Bal. Acc. Survival task adds c-index (risk = expected class). Undefined
/// metrics are NaN.
std::vector<std::pair<std::string, double>> score_predictions(const Eigen::MatrixXd& probabilities,
                                                              const std::vector<int>& labels,
                                                              const std::vector<double>& times,
                                                              const std::vector<int>& events, const std::string& task);

/// Mean and sample standard deviation per metric across instances.
MetricTable summarize(const std::vector<std::vector<std::pair<std::string, double>>>& per_instance);

std::string format_metric_table(const MetricTable& table);

// ------------------------------------------------------------- predictions

struct PredictionRow {
    std::string slide_id;
    int instance = 0;
    int label = 0;
    std::optional<double> time;
    std::optional<bool> event;
    std::array<double, gnn::kClassCount> probabilities{};
};

/// CSV: slide_id,instance,label,time,event,p0,p1,p2,p3 (17 significant digits).
void write_predictions(const fs::path& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions(const fs::path& path);

/// Per-instance scores of a predictions file, summarised.
MetricTable evaluate_predictions(const std::vector<PredictionRow>& rows, const std::string& task);

// ------------------------------------------------------------------ runs

struct StageRecord {
    std::string name;
    bool cache_hit = false;
};

struct SlideResult {
    std::string slide_id;
    std::string split;
    bool ok = false;
    std::string error;
    int initial_nodes = 0;
    int nodes = 0;
    std::vector<StageRecord> stages;
    fs::path coarse_dir;
    fs::path features_dir;
};

struct RunSummary {
    fs::path run_dir;
    std::vector<SlideResult> slides;
    int failures = 0;
    std::vector<std::string> warnings;
    bool trained = false;
    std::vector<std::string> active_features;
    std::optional<eval::SearchResult> search;
    MetricTable metrics;
    double mean_nodes = 0;  // over successful slides
};

/// Runs every stage for every slide (cached under output_root/cache), then
/// pruning, random search, test evaluation and explanations. Outputs go to
/// a fresh output_root/runs/run-NNNN directory whose config.json is written
/// first. A failing slide is recorded and skipped.
RunSummary run_pipeline(const eval::Manifest& manifest, const config::RunConfig& cfg);

/// Per-slide stages only.
std::vector<SlideResult> process_slides(const eval::Manifest& manifest, const config::RunConfig& cfg);

struct SweepRow {
    double value = 0;
    MetricTable metrics;
    double mean_nodes = 0;
    fs::path run_dir;
};

struct SweepTable {
    std::string param;  // tau | xi
    std::vector<SweepRow> rows;
};

/// One run per value with `param` overridden. All values are validated
/// before the first run; an illegal one throws ConfigError.
SweepTable sweep(const eval::Manifest& manifest, const config::RunConfig& cfg, const std::string& param,
                 const std::vector<double>& values);

std::string format_sweep_table(const SweepTable& table);

// ------------------------------------------------- working with a run dir

struct TrainedRun {
    config::RunConfig config;
    std::vector<std::string> active_features;
    std::vector<gnn::GatModel> models;
};

TrainedRun load_run(const fs::path& run_dir);

/// Predictions of every instance for the slides of `split` (all if empty).
std::vector<PredictionRow> predict(const TrainedRun& run, const eval::Manifest& manifest, const std::string& split);

/// Integrated-gradients explanation of one slide with the first instance.
/// `target_class` < 0 explains the predicted class. Writes overlay.png and
/// report.json into `out_dir` and returns the completeness gap.
double explain_slide(const TrainedRun& run, const eval::Manifest& manifest, const std::string& slide_id,
                     int target_class, int steps, const fs::path& out_dir);

} // namespace tissuegraph::pipeline
