#include "doctest.h"

#include "gat_fixtures.hpp"

#include "tissuegraph/error.hpp"
#include "tissuegraph/gnn.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace tg = tissuegraph;
namespace gnn = tissuegraph::gnn;
using namespace gat_fixtures;

namespace {

gnn::GatModel train_ready_tiny(int dim, int hidden, double dropout = 0.0) {
    gnn::ModelConfig c;
    c.input_dim = dim;
    c.hidden = hidden;
    c.layers = 1;
    c.heads = 1;
    c.mlp_hidden = hidden;
    c.dropout = dropout;
    return gnn::GatModel::zeros(c);
}

} // namespace

TEST_CASE("golden tiny model logits") {
    auto [model, graph] = tiny();
    const auto cache = gnn::forward(model, gnn::make_batch(graph));
    for (int k = 0; k < 4; ++k) CHECK(cache.logits(0, k) == doctest::Approx(kTinyLogits[k]).epsilon(1e-12));
    const auto p = gnn::predict(model, graph);
    for (int k = 0; k < 4; ++k) CHECK(p[k] == doctest::Approx(kTinyProbs[k]).epsilon(1e-12));
}

TEST_CASE("golden two-layer model for each readout") {
    const std::pair<gnn::Readout, const double*> cases[] = {
        {gnn::Readout::Mean, kSmallMeanLogits}, {gnn::Readout::Sum, kSmallSumLogits}, {gnn::Readout::Max, kSmallMaxLogits}};
    for (auto [readout, want] : cases) {
        auto [model, graph] = small(readout);
        const auto cache = gnn::forward(model, gnn::make_batch(graph));
        for (int k = 0; k < 4; ++k) CHECK(std::fabs(cache.logits(0, k) - want[k]) < 1e-12);
    }
}

TEST_CASE("batch construction adds self-loops and both directions") {
    gnn::GraphInput a{Eigen::MatrixXd::Zero(3, 2), {{0, 1}, {1, 0}, {2, 2}}};
    gnn::GraphInput b{Eigen::MatrixXd::Ones(2, 2), {{0, 1}}};
    const gnn::GraphInput* both[] = {&a, &b};
    const auto batch = gnn::make_batch(both);
    CHECK(batch.node_count() == 5);
    CHECK(batch.graph_count == 2);
    CHECK(batch.graph_of == std::vector<int>{0, 0, 0, 1, 1});
    // (dst, src) pairs in order.
    std::vector<std::pair<int, int>> got;
    for (std::size_t e = 0; e < batch.src.size(); ++e) got.emplace_back(batch.dst[e], batch.src[e]);
    CHECK(got == std::vector<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 2}, {3, 3}, {3, 4}, {4, 3}, {4, 4}});

    gnn::GraphInput bad{Eigen::MatrixXd::Zero(2, 2), {{0, 2}}};
    CHECK_THROWS_AS(gnn::make_batch(bad), tg::InvalidArgument);
    gnn::GraphInput other_dim{Eigen::MatrixXd::Zero(2, 3), {}};
    const gnn::GraphInput* mixed[] = {&a, &other_dim};
    CHECK_THROWS_AS(gnn::make_batch(mixed), tg::InvalidArgument);
}

TEST_CASE("single node attends only to itself") {
    auto [model, graph] = tiny();
    gnn::GraphInput one{graph.features.topRows(1), {}};
    const auto cache = gnn::forward(model, gnn::make_batch(one));
    REQUIRE(cache.layers[0].heads[0].alpha.size() == 1);
    CHECK(cache.layers[0].heads[0].alpha(0) == 1.0);
    const Eigen::RowVectorXd wx = one.features.row(0) * model.layers[0].heads[0].weight;
    for (int c = 0; c < 2; ++c) {
        const double v = wx(c) > 0 ? wx(c) : std::expm1(wx(c));
        CHECK(cache.layers[0].output(0, c) == doctest::Approx(v).epsilon(1e-15));
    }
}

TEST_CASE("identical connected nodes split attention evenly") {
    auto [model, graph] = tiny();
    gnn::GraphInput twin{Eigen::MatrixXd(2, 3), {{0, 1}}};
    twin.features.row(0) = graph.features.row(0);
    twin.features.row(1) = graph.features.row(0);
    const auto cache = gnn::forward(model, gnn::make_batch(twin));
    for (Eigen::Index e = 0; e < cache.layers[0].heads[0].alpha.size(); ++e) {
        CHECK(cache.layers[0].heads[0].alpha(e) == doctest::Approx(0.5).epsilon(1e-15));
    }
    gnn::GraphInput alone{graph.features.topRows(1), {}};
    const auto single = gnn::forward(model, gnn::make_batch(alone));
    for (int k = 0; k < 4; ++k) CHECK(cache.logits(0, k) == doctest::Approx(single.logits(0, k)).epsilon(1e-14));
}

TEST_CASE("dimension mismatch is rejected") {
    auto [model, graph] = tiny();
    gnn::GraphInput wrong{Eigen::MatrixXd::Zero(2, 4), {}};
    CHECK_THROWS_AS(gnn::forward(model, gnn::make_batch(wrong)), tg::InvalidArgument);
    CHECK_THROWS_AS(gnn::predict(model, wrong), tg::InvalidArgument);
}

TEST_CASE("loss examples") {
    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 4);
    for (int y = 0; y < 4; ++y) {
        const int label[] = {y};
        CHECK(gnn::loss(zero, label) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    }
    Eigen::MatrixXd sure = Eigen::MatrixXd::Zero(1, 4);
    sure(0, 2) = 20;
    const int two[] = {2};
    CHECK(gnn::loss(sure, two) < 1e-8);
    const int bad[] = {4};
    CHECK_THROWS_AS(gnn::loss(zero, bad), tg::InvalidArgument);
    const int neg[] = {-1};
    CHECK_THROWS_AS(gnn::loss(zero, neg), tg::InvalidArgument);
}

TEST_CASE("weighted loss matches direct formula") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd logits(3, 4);
        for (int b = 0; b < 3; ++b)
            for (int k = 0; k < 4; ++k) logits(b, k) = static_cast<double>(rng() % 2000) / 100.0 - 10;
        const int labels[] = {static_cast<int>(rng() % 4), static_cast<int>(rng() % 4), static_cast<int>(rng() % 4)};
        const double weights[] = {0.5, 1.0, 2.0, 1.5};
        long double want = 0;
        for (int b = 0; b < 3; ++b) {
            long double z = 0;
            for (int k = 0; k < 4; ++k) z += std::exp(static_cast<long double>(logits(b, k)));
            want += weights[labels[b]] * -std::log(std::exp(static_cast<long double>(logits(b, labels[b]))) / z);
        }
        want /= 3;
        CHECK(std::fabs(gnn::loss(logits, labels, weights) - static_cast<double>(want)) < 1e-12);
    }
}

TEST_CASE("zero head gives softmax-minus-onehot bias gradient") {
    std::mt19937_64 rng(8);
    auto model = random_model(rng, 3, gnn::Readout::Mean);
    model.mlp_w2.setZero();
    model.mlp_b2.setZero();
    std::vector<gnn::GraphInput> graphs = {random_graph(rng, 4, 3), random_graph(rng, 2, 3), random_graph(rng, 5, 3)};
    std::vector<const gnn::GraphInput*> ptrs;
    for (auto& g : graphs) ptrs.push_back(&g);
    const auto batch = gnn::make_batch(ptrs);
    const int labels[] = {1, 3, 1};
    const auto cache = gnn::forward(model, batch);
    auto [l, dlogits] = gnn::loss_with_grad(cache.logits, labels);
    const auto grads = gnn::backward(model, batch, cache, dlogits);
    for (int k = 0; k < 4; ++k) {
        double want = 0;
        for (int y : labels) want += (0.25 - (k == y ? 1.0 : 0.0)) / 3.0;
        CHECK(grads.params.mlp_b2(k) == doctest::Approx(want).epsilon(1e-15));
    }
}


TEST_CASE("gradients match central differences over 20 seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        const auto readout = seed % 3 == 0 ? gnn::Readout::Mean : seed % 3 == 1 ? gnn::Readout::Sum : gnn::Readout::Max;
        const auto bad = gradient_mismatches(rng, readout, seed % 2 == 1);
        for (const auto& b : bad) MESSAGE("seed " << seed << ": " << b);
        CHECK(bad.empty());
    }
}

TEST_CASE("other graphs in a batch get zero input gradient") {
    std::mt19937_64 rng(12);
    auto model = random_model(rng, 3, gnn::Readout::Mean);
    auto g0 = random_graph(rng, 4, 3);
    gnn::GraphInput isolated{Eigen::MatrixXd::Random(1, 3), {}};
    const gnn::GraphInput* ptrs[] = {&g0, &isolated};
    const auto batch = gnn::make_batch(ptrs);
    const auto cache = gnn::forward(model, batch);
    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(2, 4);
    dlogits.row(0) << 0.3, -1.0, 0.2, 0.5;
    const auto grads = gnn::backward(model, batch, cache, dlogits);
    CHECK(grads.inputs.row(4).isZero(0));
    CHECK(!grads.inputs.topRows(4).isZero(0));
}

TEST_CASE("attention rows sum to one") {
    std::mt19937_64 rng(13);
    auto model = random_model(rng, 3, gnn::Readout::Mean);
    const auto g = random_graph(rng, 9, 3);
    const auto batch = gnn::make_batch(g);
    const auto cache = gnn::forward(model, batch);
    for (const auto& layer : cache.layers) {
        for (const auto& head : layer.heads) {
            std::vector<double> sums(batch.node_count(), 0.0);
            for (std::size_t e = 0; e < batch.dst.size(); ++e) sums[batch.dst[e]] += head.alpha(static_cast<Eigen::Index>(e));
            for (double s : sums) CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("node relabelling leaves logits unchanged") {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        auto model = random_model(rng, 3, trial % 2 ? gnn::Readout::Max : gnn::Readout::Mean);
        const auto g = random_graph(rng, 8, 3);
        std::vector<int> perm(8);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        gnn::GraphInput p{Eigen::MatrixXd(8, 3), {}};
        for (int i = 0; i < 8; ++i) p.features.row(perm[i]) = g.features.row(i);
        for (auto [u, v] : g.edges) p.edges.emplace_back(perm[u], perm[v]);
        const auto a = gnn::forward(model, gnn::make_batch(g)).logits;
        const auto b = gnn::forward(model, gnn::make_batch(p)).logits;
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("duplicating the graph leaves mean-pooled representation unchanged") {
    std::mt19937_64 rng(15);
    auto model = random_model(rng, 3, gnn::Readout::Mean);
    const auto g = random_graph(rng, 6, 3);
    gnn::GraphInput d{Eigen::MatrixXd(12, 3), g.edges};
    d.features << g.features, g.features;
    for (auto [u, v] : g.edges) d.edges.emplace_back(u + 6, v + 6);
    const auto a = gnn::forward(model, gnn::make_batch(g));
    const auto b = gnn::forward(model, gnn::make_batch(d));
    CHECK((a.pooled - b.pooled).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("predict returns a distribution") {
    std::mt19937_64 rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        auto model = random_model(rng, 3, gnn::Readout::Mean);
        const auto p = gnn::predict(model, random_graph(rng, 5, 3));
        double s = 0;
        for (double v : p) {
            CHECK(v >= 0);
            s += v;
        }
        CHECK(std::fabs(s - 1) < 1e-12);
    }
    auto flat = train_ready_tiny(3, 2);
    const auto p = gnn::predict(flat, random_graph(rng, 3, 3));
    for (double v : p) CHECK(v == 0.25);
}

namespace {

// Two classes by the sign of feature 0; feature 1 is noise.
std::vector<gnn::LabeledGraph> separable(std::mt19937_64& rng, int count) {
    std::vector<gnn::LabeledGraph> out;
    for (int i = 0; i < count; ++i) {
        const int label = i % 2 == 0 ? 0 : 3;
        auto g = random_graph(rng, 3 + static_cast<int>(rng() % 4), 2);
        for (Eigen::Index r = 0; r < g.features.rows(); ++r) {
            g.features(r, 0) = (label == 0 ? 1.0 : -1.0) * (0.5 + std::fabs(g.features(r, 0)));
        }
        out.push_back({g, label});
    }
    return out;
}

gnn::TrainConfig small_config() {
    gnn::TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 1e-4;
    cfg.epochs = 200;
    cfg.batch_size = 8;
    cfg.seed = 5;
    cfg.hidden = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.mlp_hidden = 8;
    cfg.dropout = 0.1;
    return cfg;
}

} // namespace

TEST_CASE("separable graphs are learned") {
    std::mt19937_64 rng(17);
    const auto data = separable(rng, 40);
    auto cfg = small_config();
    const auto result = gnn::train(data, {}, cfg);
    REQUIRE(result.history.size() == 200);
    bool reached = false;
    for (const auto& h : result.history) reached |= h.train_accuracy == 1.0;
    CHECK(reached);
    int correct = 0;
    for (const auto& d : data) {
        const auto p = gnn::predict(result.model, d.graph);
        correct += std::max_element(p.begin(), p.end()) - p.begin() == d.label;
    }
    CHECK(correct == 40);
    CHECK(std::isnan(result.history.back().val_loss));
}

TEST_CASE("training is deterministic for a seed") {
    std::mt19937_64 rng(18);
    const auto data = separable(rng, 16);
    const auto val = separable(rng, 6);
    auto cfg = small_config();
    cfg.epochs = 15;
    const auto a = gnn::train(data, val, cfg);
    const auto b = gnn::train(data, val, cfg);
    CHECK(a.model == b.model);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_loss == b.history[i].val_loss);
    }
    cfg.seed = 6;
    CHECK(!(gnn::train(data, val, cfg).model == a.model));
}

TEST_CASE("zero learning rate leaves parameters at initialisation") {
    std::mt19937_64 rng(19);
    const auto data = separable(rng, 10);
    for (auto opt : {gnn::Optimizer::AdamW, gnn::Optimizer::Sgd}) {
        auto cfg = small_config();
        cfg.lr = 0;
        cfg.epochs = 7;
        cfg.optimizer = opt;
        auto trained = gnn::train(data, {}, cfg).model;
        gnn::ModelConfig mc{2, cfg.hidden, cfg.layers, cfg.heads, cfg.mlp_hidden, cfg.dropout, cfg.readout};
        tg::rnd::Engine init_rng(cfg.seed);
        auto init = gnn::GatModel::init(mc, init_rng);
        auto a = trained.parameters();
        auto b = init.parameters();
        for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t].second == b[t].second);
    }
}

TEST_CASE("non-finite loss aborts training") {
    std::mt19937_64 rng(20);
    auto data = separable(rng, 6);
    data[2].graph.features(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(gnn::train(data, {}, small_config()), tg::Divergence);
}

TEST_CASE("training argument checks") {
    std::mt19937_64 rng(21);
    const auto data = separable(rng, 4);
    CHECK_THROWS_AS(gnn::train({}, {}, small_config()), tg::InvalidArgument);
    auto cfg = small_config();
    cfg.epochs = 0;
    CHECK_THROWS_AS(gnn::train(data, {}, cfg), tg::InvalidArgument);
    cfg = small_config();
    cfg.lr = -1;
    CHECK_THROWS_AS(gnn::train(data, {}, cfg), tg::InvalidArgument);
}

TEST_CASE("balanced class weights") {
    std::vector<gnn::LabeledGraph> data(6);
    data[0].label = data[1].label = data[2].label = data[3].label = 0;
    data[4].label = data[5].label = 2;
    const auto w = gnn::class_weights(data, gnn::ClassWeighting::Balanced);
    CHECK(w == std::vector<double>{6.0 / 8.0, 1.0, 6.0 / 4.0, 1.0});
    CHECK(gnn::class_weights(data, gnn::ClassWeighting::None) == std::vector<double>(4, 1.0));
}

TEST_CASE("checkpoint round trip") {
    std::mt19937_64 rng(22);
    const auto data = separable(rng, 8);
    auto cfg = small_config();
    cfg.epochs = 3;
    cfg.readout = gnn::Readout::Max;
    const auto model = gnn::train(data, {}, cfg).model;
    const auto path = std::filesystem::temp_directory_path() / "tg_test_model.tgck";
    gnn::save_checkpoint(path, model);
    const auto back = gnn::load_checkpoint(path);
    CHECK(back == model);
    CHECK(back.config.readout == gnn::Readout::Max);
    CHECK(back.config.hidden == cfg.hidden);
    CHECK(gnn::predict(back, data[0].graph) == gnn::predict(model, data[0].graph));

    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 3);
    CHECK_THROWS_AS(gnn::load_checkpoint(path), tg::IoError);
    std::filesystem::remove(path);
}
