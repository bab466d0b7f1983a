#pragma once

#include "tissuegraph/gnn.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace tissuegraph::config {

struct TissueConfig {
    int downsample = 1;  // full resolution -> segmentation scale
    int close_radius = 4;
    int open_radius = 2;
    int min_component_area = 64;

    bool operator==(const TissueConfig&) const = default;
};

struct SegmentationConfig {
    double seg_mag = 0.625;
    double ref_mag = 32.0;
    double target_side = 300.0;
    double compactness = 10.0;
    int iterations = 10;
    std::string color_distance = "lab";  // lab | rgb

    bool operator==(const SegmentationConfig&) const = default;
};

struct CoarsenConfig {
    double tau = 0.9;
    std::string embeddings = "builtin";  // builtin | file (manifest embedding_path)

    bool operator==(const CoarsenConfig&) const = default;
};

struct FeatureConfig {
    int levels = 32;
    double bright_cutoff = 200.0;
    double dark_cutoff = 50.0;
    bool include_lbp = false;
    double xi = 0.99;

    bool operator==(const FeatureConfig&) const = default;
};

struct ModelConfig {
    int hidden = 64;
    int layers = 3;
    int heads = 4;
    int mlp_hidden = 64;
    double dropout = 0.2;
    std::string readout = "mean";            // mean | sum | max
    std::string class_weighting = "none";    // none | balanced
    std::string optimizer = "adamw";         // adamw | sgd
    int epochs = 100;
    int batch_size = 8;

    bool operator==(const ModelConfig&) const = default;
};

struct SearchConfig {
    int trials = 25;
    int instances = 5;
    double lr_min = 1e-5;
    double lr_max = 1e-2;
    double wd_min = 1e-6;
    double wd_max = 1e-2;

    bool operator==(const SearchConfig&) const = default;
};

struct ExplainConfig {
    int steps = 64;
    int top_k = 10;
    int max_slides = 4;  // test slides explained per run

    bool operator==(const ExplainConfig&) const = default;
};

struct EvalConfig {
    std::string task = "stage";  // stage | survival

    bool operator==(const EvalConfig&) const = default;
};

/// Every tunable of a pipeline run. Serialised as a JSON object with one
/// nested object per section; unknown keys are rejected.
struct RunConfig {
    std::filesystem::path manifest;
    std::filesystem::path output_root = "out";
    std::uint64_t seed = 0;
    int workers = 1;
    TissueConfig tissue;
    SegmentationConfig segmentation;
    CoarsenConfig coarsen;
    FeatureConfig features;
    ModelConfig model;
    SearchConfig search;
    ExplainConfig explain;
    EvalConfig eval;

    bool operator==(const RunConfig&) const = default;
};

std::string to_json(const RunConfig& cfg);

/// Throws ConfigError on malformed JSON, unknown keys, wrong value types or
/// out-of-range values. Missing keys keep their defaults.
RunConfig from_json(const std::string& text);

RunConfig load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const RunConfig& cfg);

/// Throws ConfigError naming the first illegal value.
void validate(const RunConfig& cfg);

/// Training settings for one model instance.
gnn::TrainConfig train_config(const RunConfig& cfg, double lr, double weight_decay, std::uint64_t seed);

} // namespace tissuegraph::config
