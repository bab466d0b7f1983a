#pragma once

#include "tissuegraph/gnn.hpp"
#include "tissuegraph/raster.hpp"
#include "tissuegraph/superpixel.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace tissuegraph::attribution {

inline constexpr int kDefaultSteps = 64;

struct AttributionReport {
    Eigen::MatrixXd scores;      // nodes x features
    Eigen::VectorXd importance;  // per node, sum of |scores| over features
    int target_class = 0;
    int steps = 0;
    double output = 0;           // F(x)
    double baseline_output = 0;  // F(0)
    double completeness_gap = 0; // |sum(scores) - (F(x) - F(0))|
};

/// Differentiable scalar function: value and gradient at x.
using ScalarFunction = std::function<std::pair<double, Eigen::MatrixXd>(const Eigen::MatrixXd&)>;

/// IG with the all-zero baseline: x * (1/m) sum_{k=1..m} grad F((k/m) x).
AttributionReport integrated_gradients(const ScalarFunction& f, const Eigen::MatrixXd& x, int steps = kDefaultSteps);

/// The batch with features scaled by t; edge lists are shared unchanged.
gnn::GraphBatch interpolate(const gnn::GraphBatch& batch, double t);

/// IG of the pre-softmax logit `target_class` of graph `graph_index`, with
/// respect to every node feature of the batch.
AttributionReport integrated_gradients(const gnn::GatModel& model, const gnn::GraphBatch& batch, int graph_index,
                                       int target_class, int steps = kDefaultSteps);

AttributionReport integrated_gradients(const gnn::GatModel& model, const gnn::GraphInput& graph, int target_class,
                                       int steps = kDefaultSteps);

int predicted_class(const gnn::GatModel& model, const gnn::GraphInput& graph);

/// Per-node L1 row sum of the attribution matrix.
Eigen::VectorXd region_importance(const AttributionReport& report);

/// Training-split statistics per feature.
struct DatasetStats {
    std::vector<std::string> names;
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;
    /// features x 99, column q-1 holds the q-th percentile.
    Eigen::MatrixXd percentiles;

    static DatasetStats fit(const Eigen::MatrixXd& training_rows, std::vector<std::string> names);

    /// Position of `value` in the feature's percentile table, in [0, 100].
    double percentile_rank(int feature, double value) const;
};

struct FeatureExplanation {
    std::string name;
    int feature = 0;
    double attribution = 0;   // signed IG summed over nodes
    int node = 0;             // node with the largest |IG| for this feature
    double region_value = 0;  // that node's raw feature value
    double percentile = 0;    // its rank against the training split
};

/// Top-k features by |sum over nodes of IG|. k larger than the feature count
/// is truncated and a warning is appended to `warnings` when given.
std::vector<FeatureExplanation> explain_features(const AttributionReport& report, const Eigen::MatrixXd& node_features,
                                                 const DatasetStats& stats, int k,
                                                 std::vector<std::string>* warnings = nullptr);

inline constexpr double kOverlayAlpha = 0.45;

/// Colormap entry k of 256: yellow (255, 255, 0) at 0 to red (255, 0, 0) at 255.
std::array<std::uint8_t, 3> heat_color(int k);

/// Tint each labelled region by its min-max normalised importance
/// (indexed by label). Background pixels are left unchanged.
raster::RgbImage render_overlay(const superpixel::LabelMap& labels, const Eigen::VectorXd& importance,
                                const raster::RgbImage& base);

/// JSON report: target class, steps, outputs, gap, per-node importance and
/// the explained feature table.
void write_report(const std::filesystem::path& path, const AttributionReport& report, const std::vector<int>& node_ids,
                  const std::vector<FeatureExplanation>& features);

} // namespace tissuegraph::attribution
