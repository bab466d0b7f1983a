#include "doctest.h"

#include "gat_fixtures.hpp"

#include "tissuegraph/attribution.hpp"
#include "tissuegraph/error.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace tg = tissuegraph;
namespace at = tissuegraph::attribution;
namespace gnn = tissuegraph::gnn;
using namespace gat_fixtures;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<double>(rng() >> 11) * 0x1.0p-53 * 6 - 3;
    return m;
}

} // namespace

TEST_CASE("linear model attributions are exact") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd w = random_matrix(rng, 4, 5);
        const Eigen::MatrixXd x = random_matrix(rng, 4, 5);
        const at::ScalarFunction f = [&w](const Eigen::MatrixXd& in) {
            return std::make_pair(w.cwiseProduct(in).sum(), w);
        };
        for (int m : {1, 7, 64, 300}) {
            const auto r = at::integrated_gradients(f, x, m);
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 5; ++j) CHECK(r.scores(i, j) == w(i, j) * x(i, j));
            CHECK(r.completeness_gap < 1e-12);
        }
    }
}

TEST_CASE("steps must be positive") {
    const at::ScalarFunction f = [](const Eigen::MatrixXd& in) { return std::make_pair(in.sum(), Eigen::MatrixXd(in)); };
    CHECK_THROWS_AS(at::integrated_gradients(f, Eigen::MatrixXd::Ones(2, 2), 0), tg::InvalidArgument);
    auto [model, graph] = tiny();
    CHECK_THROWS_AS(at::integrated_gradients(model, graph, 0, 0), tg::InvalidArgument);
}

TEST_CASE("baseline input has zero attributions") {
    std::mt19937_64 rng(2);
    auto model = random_model(rng, 3, gnn::Readout::Mean);
    auto g = random_graph(rng, 5, 3);
    g.features.setZero();
    const auto r = at::integrated_gradients(model, g, 1, 32);
    CHECK(r.scores.isZero(0));
    CHECK(r.importance.isZero(0));
    CHECK(r.completeness_gap == 0.0);
}

TEST_CASE("completeness gap shrinks on the golden model") {
    auto [model, graph] = tiny();
    const int target = at::predicted_class(model, graph);
    double previous = 1e300;
    double last_gap = 0, delta = 0;
    for (int m : {16, 64, 256}) {
        const auto r = at::integrated_gradients(model, graph, target, m);
        CHECK(r.completeness_gap < previous);
        previous = r.completeness_gap;
        last_gap = r.completeness_gap;
        delta = std::fabs(r.output - r.baseline_output);
        CHECK(r.output == doctest::Approx(kTinyLogits[target]).epsilon(1e-12));
    }
    REQUIRE(delta > 0);
    CHECK(last_gap < 0.01 * delta);
}

TEST_CASE("interpolants share the edge list") {
    std::mt19937_64 rng(3);
    const auto batch = gnn::make_batch(random_graph(rng, 7, 3));
    for (double t : {0.0, 0.25, 1.0}) {
        const auto p = at::interpolate(batch, t);
        CHECK(p.src == batch.src);
        CHECK(p.dst == batch.dst);
        CHECK(p.graph_of == batch.graph_of);
        CHECK(p.features == t * batch.features);
    }
}

TEST_CASE("nodes of another graph get exactly zero attribution") {
    std::mt19937_64 rng(4);
    auto model = random_model(rng, 3, gnn::Readout::Mean);
    const auto a = random_graph(rng, 4, 3);
    const auto b = random_graph(rng, 3, 3);
    const gnn::GraphInput* both[] = {&a, &b};
    const auto batch = gnn::make_batch(both);
    const auto r = at::integrated_gradients(model, batch, 0, 2, 16);
    CHECK(r.scores.bottomRows(3).isZero(0));
    CHECK(!r.scores.topRows(4).isZero(0));
    const auto alone = at::integrated_gradients(model, a, 2, 16);
    CHECK((alone.scores - r.scores.topRows(4)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("region importance is the L1 row sum") {
    at::AttributionReport r;
    r.scores = Eigen::MatrixXd::Zero(3, 4);
    CHECK(at::region_importance(r).isZero(0));
    r.scores(1, 2) = 0.7;
    const auto one = at::region_importance(r);
    CHECK(one(1) == 0.7);
    CHECK(one(0) == 0.0);

    std::mt19937_64 rng(5);
    r.scores = random_matrix(rng, 6, 9);
    const auto imp = at::region_importance(r);
    for (int i = 0; i < 6; ++i) {
        double s = 0;
        for (int j = 0; j < 9; ++j) s += std::fabs(r.scores(i, j));
        CHECK(imp(i) == doctest::Approx(s).epsilon(1e-15));
    }
}

TEST_CASE("dataset statistics and percentile rank") {
    Eigen::MatrixXd train(101, 2);
    for (int i = 0; i <= 100; ++i) {
        train(i, 0) = i;
        train(i, 1) = 5.0;
    }
    const auto s = at::DatasetStats::fit(train, {"ramp", "flat"});
    CHECK(s.mean(0) == 50);
    CHECK(s.percentiles(0, 49) == 50);
    CHECK(s.percentiles(0, 0) == 1);
    CHECK(std::fabs(s.percentile_rank(0, 50.0) - 50) <= 1);
    CHECK(s.percentile_rank(0, 10.5) == doctest::Approx(10.5));
    CHECK(s.percentile_rank(0, -3) == 0);
    CHECK(s.percentile_rank(0, 1000) == 100);
    CHECK(s.percentile_rank(1, 5.0) == 50);
    CHECK(s.stddev(1) == 0);

    std::mt19937_64 rng(6);
    Eigen::MatrixXd noisy = random_matrix(rng, 301, 1);
    const auto t = at::DatasetStats::fit(noisy, {"x"});
    std::vector<double> v(noisy.data(), noisy.data() + noisy.size());
    std::sort(v.begin(), v.end());
    CHECK(std::fabs(t.percentile_rank(0, v[150]) - 50) <= 1);
}

TEST_CASE("explain features ranks by summed attribution") {
    at::AttributionReport r;
    r.scores = Eigen::MatrixXd::Zero(3, 4);
    r.scores(0, 2) = 5.0;
    r.scores(1, 2) = -1.0;
    r.scores(2, 0) = 0.5;
    r.scores(1, 3) = -2.0;
    Eigen::MatrixXd x(3, 4);
    x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    const auto stats = at::DatasetStats::fit(x, {"a", "b", "c", "d"});
    auto top = at::explain_features(r, x, stats, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].name == "c");
    CHECK(top[0].attribution == 4.0);
    CHECK(top[0].node == 0);
    CHECK(top[0].region_value == 3);

    std::vector<std::string> warnings;
    top = at::explain_features(r, x, stats, 10, &warnings);
    CHECK(top.size() == 4);
    CHECK(warnings.size() == 1);
    CHECK(top[1].name == "d");
    CHECK(top[2].name == "a");
}

TEST_CASE("golden model feature ranking") {
    auto [model, graph] = tiny();
    const auto r = at::integrated_gradients(model, graph, 0, 64);
    const auto stats = at::DatasetStats::fit(graph.features, {"f0", "f1", "f2"});
    const auto top = at::explain_features(r, graph.features, stats, 3);
    std::vector<std::string> names;
    for (const auto& e : top) names.push_back(e.name);
    // Oracle: order columns by |column sum| directly.
    std::vector<std::pair<double, std::string>> naive;
    for (int f = 0; f < 3; ++f) naive.emplace_back(-std::fabs(r.scores.col(f).sum()), "f" + std::to_string(f));
    std::sort(naive.begin(), naive.end());
    for (int i = 0; i < 3; ++i) CHECK(names[i] == naive[i].second);
    CHECK(names == std::vector<std::string>{"f1", "f2", "f0"});
}

TEST_CASE("overlay colours") {
    tg::raster::RgbImage base(4, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 4; ++x) base.set_pixel(x, y, {100, 150, 200});
    tg::superpixel::LabelMap labels(4, 2);
    for (int x = 0; x < 2; ++x) labels.at(x, 0) = labels.at(x, 1) = 0;
    for (int x = 2; x < 3; ++x) labels.at(x, 0) = labels.at(x, 1) = 1;
    // Column 3 stays background.
    labels.region_count = 2;

    auto blend = [](int b, int c) { return static_cast<std::uint8_t>(std::lround(0.55 * b + 0.45 * c)); };
    const auto two = at::render_overlay(labels, Eigen::Vector2d(0.0, 1.0), base);
    CHECK(two.pixel(0, 0) == std::array<std::uint8_t, 3>{blend(100, 255), blend(150, 255), blend(200, 0)});
    CHECK(two.pixel(2, 1) == std::array<std::uint8_t, 3>{blend(100, 255), blend(150, 0), blend(200, 0)});
    CHECK(two.pixel(3, 0) == base.pixel(3, 0));

    const auto zero = at::render_overlay(labels, Eigen::Vector2d(0.0, 0.0), base);
    CHECK(zero.pixel(0, 0) == zero.pixel(2, 0));
    CHECK(zero.pixel(0, 0) == two.pixel(0, 0));
    const auto same = at::render_overlay(labels, Eigen::Vector2d(3.0, 3.0), base);
    CHECK(same == zero);

    CHECK(at::heat_color(0) == std::array<std::uint8_t, 3>{255, 255, 0});
    CHECK(at::heat_color(255) == std::array<std::uint8_t, 3>{255, 0, 0});

    tg::raster::RgbImage other(3, 2);
    CHECK_THROWS_AS(at::render_overlay(labels, Eigen::Vector2d(0, 1), other), tg::InvalidArgument);
    CHECK_THROWS_AS(at::render_overlay(labels, Eigen::VectorXd::Zero(1), base), tg::InvalidArgument);
}

TEST_CASE("report file") {
    auto [model, graph] = tiny();
    const auto r = at::integrated_gradients(model, graph, 0, 8);
    const auto stats = at::DatasetStats::fit(graph.features, {"f0", "f1", "f2"});
    const auto top = at::explain_features(r, graph.features, stats, 2);
    const auto path = std::filesystem::temp_directory_path() / "tg_test_report.json";
    at::write_report(path, r, {10, 11}, top);
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    CHECK(j["target_class"] == 0);
    CHECK(j["steps"] == 8);
    CHECK(j["nodes"].size() == 2);
    CHECK(j["nodes"][1]["id"] == 11);
    CHECK(j["top_features"].size() == 2);
    CHECK(j["completeness_gap"].get<double>() == r.completeness_gap);
    std::filesystem::remove(path);
}
