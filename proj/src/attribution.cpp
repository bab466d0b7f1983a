#include "tissuegraph/attribution.hpp"

#include "tissuegraph/error.hpp"
#include "tissuegraph/features.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace tissuegraph::attribution {

namespace {

using LongMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

void finish(AttributionReport& r, const Eigen::MatrixXd& x, const LongMatrix& grad_sum) {
    const LongMatrix mean_grad = grad_sum / static_cast<long double>(r.steps);
    r.scores = (x.cast<long double>().cwiseProduct(mean_grad)).cast<double>();
    r.importance = region_importance(r);
    r.completeness_gap = std::fabs(r.scores.sum() - (r.output - r.baseline_output));
}

} // namespace

AttributionReport integrated_gradients(const ScalarFunction& f, const Eigen::MatrixXd& x, int steps) {
    if (steps < 1) throw InvalidArgument("integrated_gradients: steps must be >= 1");
    AttributionReport r;
    r.steps = steps;
    r.output = f(x).first;
    r.baseline_output = f(Eigen::MatrixXd::Zero(x.rows(), x.cols())).first;
    LongMatrix sum = LongMatrix::Zero(x.rows(), x.cols());
    for (int k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k) / steps;
        sum += f(t * x).second.cast<long double>();
    }
    finish(r, x, sum);
    return r;
}

gnn::GraphBatch interpolate(const gnn::GraphBatch& batch, double t) {
    gnn::GraphBatch out = batch;
    out.features *= t;
    return out;
}

AttributionReport integrated_gradients(const gnn::GatModel& model, const gnn::GraphBatch& batch, int graph_index,
                                       int target_class, int steps) {
    if (steps < 1) throw InvalidArgument("integrated_gradients: steps must be >= 1");
    if (graph_index < 0 || graph_index >= batch.graph_count) throw InvalidArgument("integrated_gradients: bad graph index");
    if (target_class < 0 || target_class >= gnn::kClassCount) {
        throw InvalidArgument("integrated_gradients: target class out of range");
    }
    Eigen::MatrixXd seed = Eigen::MatrixXd::Zero(batch.graph_count, gnn::kClassCount);
    seed(graph_index, target_class) = 1.0;

    AttributionReport r;
    r.steps = steps;
    r.target_class = target_class;
    r.output = gnn::forward(model, batch).logits(graph_index, target_class);
    r.baseline_output = gnn::forward(model, interpolate(batch, 0.0)).logits(graph_index, target_class);

    LongMatrix sum = LongMatrix::Zero(batch.features.rows(), batch.features.cols());
    for (int k = 1; k <= steps; ++k) {
        const auto point = interpolate(batch, static_cast<double>(k) / steps);
        const auto cache = gnn::forward(model, point);
        sum += gnn::backward(model, point, cache, seed).inputs.cast<long double>();
    }
    finish(r, batch.features, sum);
    return r;
}

AttributionReport integrated_gradients(const gnn::GatModel& model, const gnn::GraphInput& graph, int target_class,
                                       int steps) {
    return integrated_gradients(model, gnn::make_batch(graph), 0, target_class, steps);
}

int predicted_class(const gnn::GatModel& model, const gnn::GraphInput& graph) {
    const auto p = gnn::predict(model, graph);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

Eigen::VectorXd region_importance(const AttributionReport& report) {
    return report.scores.cwiseAbs().rowwise().sum();
}

DatasetStats DatasetStats::fit(const Eigen::MatrixXd& training_rows, std::vector<std::string> names) {
    if (training_rows.rows() == 0) throw InvalidArgument("DatasetStats: no training rows");
    if (static_cast<Eigen::Index>(names.size()) != training_rows.cols()) {
        throw InvalidArgument("DatasetStats: name count does not match columns");
    }
    DatasetStats s;
    s.names = std::move(names);
    const auto cols = training_rows.cols();
    s.mean = training_rows.colwise().mean().transpose();
    s.stddev.resize(cols);
    s.percentiles.resize(cols, 99);
    for (Eigen::Index j = 0; j < cols; ++j) {
        const Eigen::VectorXd col = training_rows.col(j);
        s.stddev(j) = std::sqrt((col.array() - s.mean(j)).square().mean());
        std::vector<double> v(col.data(), col.data() + col.size());
        std::sort(v.begin(), v.end());
        for (int q = 1; q <= 99; ++q) s.percentiles(j, q - 1) = features::percentile(v, q);
    }
    return s;
}

double DatasetStats::percentile_rank(int feature, double value) const {
    if (feature < 0 || feature >= percentiles.rows()) throw InvalidArgument("percentile_rank: feature out of range");
    const auto row = percentiles.row(feature);
    if (value < row(0)) return 0.0;
    if (value > row(98)) return 100.0;
    // Flat stretches of the table (ties) rank at their midpoint.
    int lo = 0;
    while (lo < 98 && row(lo + 1) <= value) ++lo;
    if (row(lo) == value) {
        int first = lo;
        while (first > 0 && row(first - 1) == value) --first;
        return (first + lo) / 2.0 + 1.0;
    }
    const double frac = (value - row(lo)) / (row(lo + 1) - row(lo));
    return lo + 1.0 + frac;
}

std::vector<FeatureExplanation> explain_features(const AttributionReport& report, const Eigen::MatrixXd& node_features,
                                                 const DatasetStats& stats, int k, std::vector<std::string>* warnings) {
    const auto cols = report.scores.cols();
    if (node_features.rows() != report.scores.rows() || node_features.cols() != cols) {
        throw InvalidArgument("explain_features: node features do not match the report");
    }
    if (static_cast<Eigen::Index>(stats.names.size()) != cols) {
        throw InvalidArgument("explain_features: statistics do not match the report");
    }
    if (k < 0) throw InvalidArgument("explain_features: k must be >= 0");
    if (k > cols) {
        if (warnings) {
            warnings->push_back("requested " + std::to_string(k) + " features, only " + std::to_string(cols) +
                                " are active");
        }
        k = static_cast<int>(cols);
    }
    const Eigen::VectorXd totals = report.scores.colwise().sum().transpose();
    std::vector<int> order(static_cast<std::size_t>(cols));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return std::fabs(totals(a)) > std::fabs(totals(b)); });

    std::vector<FeatureExplanation> out;
    for (int i = 0; i < k; ++i) {
        const int f = order[i];
        FeatureExplanation e;
        e.name = stats.names[f];
        e.feature = f;
        e.attribution = totals(f);
        Eigen::Index node = 0;
        report.scores.col(f).cwiseAbs().maxCoeff(&node);
        e.node = static_cast<int>(node);
        e.region_value = node_features(node, f);
        e.percentile = stats.percentile_rank(f, e.region_value);
        out.push_back(e);
    }
    return out;
}

std::array<std::uint8_t, 3> heat_color(int k) {
    k = std::clamp(k, 0, 255);
    return {255, static_cast<std::uint8_t>(255 - k), 0};
}

raster::RgbImage render_overlay(const superpixel::LabelMap& labels, const Eigen::VectorXd& importance,
                                const raster::RgbImage& base) {
    if (labels.width != base.width() || labels.height != base.height()) {
        throw InvalidArgument("render_overlay: label map and image dimensions differ");
    }
    int max_label = -1;
    for (int v : labels.labels) max_label = std::max(max_label, v);
    if (max_label >= importance.size()) throw InvalidArgument("render_overlay: missing importance for a label");

    double lo = 0, hi = 0;
    if (importance.size() > 0) {
        lo = importance.minCoeff();
        hi = importance.maxCoeff();
    }
    raster::RgbImage out = base;
    auto data = out.data();
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const int label = labels.labels[i];
        if (label == superpixel::kBackground) continue;
        const double u = hi > lo ? (importance(label) - lo) / (hi - lo) : 0.0;
        const auto color = heat_color(static_cast<int>(std::lround(255.0 * u)));
        for (int c = 0; c < 3; ++c) {
            const double mixed = (1.0 - kOverlayAlpha) * data[3 * i + c] + kOverlayAlpha * color[c];
            data[3 * i + c] = static_cast<std::uint8_t>(std::lround(mixed));
        }
    }
    return out;
}

void write_report(const std::filesystem::path& path, const AttributionReport& report, const std::vector<int>& node_ids,
                  const std::vector<FeatureExplanation>& features) {
    if (static_cast<Eigen::Index>(node_ids.size()) != report.importance.size()) {
        throw InvalidArgument("write_report: node id count does not match the report");
    }
    nlohmann::ordered_json j;
    j["target_class"] = report.target_class;
    j["steps"] = report.steps;
    j["output"] = report.output;
    j["baseline_output"] = report.baseline_output;
    j["completeness_gap"] = report.completeness_gap;
    j["nodes"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < node_ids.size(); ++i) {
        j["nodes"].push_back({{"id", node_ids[i]}, {"importance", report.importance(static_cast<Eigen::Index>(i))}});
    }
    j["top_features"] = nlohmann::ordered_json::array();
    for (const auto& f : features) {
        j["top_features"].push_back({{"name", f.name},
                                     {"attribution", f.attribution},
                                     {"node", node_ids.at(static_cast<std::size_t>(f.node))},
                                     {"region_value", f.region_value},
                                     {"training_percentile", f.percentile}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

} // namespace tissuegraph::attribution
