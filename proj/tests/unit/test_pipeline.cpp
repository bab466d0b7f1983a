#include "doctest.h"

#include "run_fixtures.hpp"

#include "tissuegraph/artifacts.hpp"
#include "tissuegraph/config.hpp"
#include "tissuegraph/error.hpp"
#include "tissuegraph/pipeline.hpp"
#include "tissuegraph/synth.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace fs = std::filesystem;
namespace tg = tissuegraph;
namespace pl = tissuegraph::pipeline;
using nlohmann::json;
using run_fixtures::TempDir;
using run_fixtures::tree_digest;

namespace {

tg::config::RunConfig quick_config(const fs::path& out) {
    auto cfg = tg::synth::fixture_config();
    cfg.output_root = out;
    cfg.model.epochs = 5;
    cfg.search.trials = 1;
    cfg.search.instances = 1;
    cfg.explain.steps = 8;
    cfg.explain.max_slides = 1;
    return cfg;
}

tg::eval::Manifest small_fixture(const fs::path& dir, int count) {
    tg::synth::SynthParams p;
    p.count = count;
    p.width = p.height = 48;
    p.seed = 5;
    return tg::synth::generate(dir, p);
}

std::string mutate(const std::function<void(json&)>& edit) {
    auto j = json::parse(tg::config::to_json(tg::config::RunConfig{}));
    edit(j);
    return j.dump();
}

} // namespace

TEST_CASE("config round trips losslessly") {
    auto cfg = tg::synth::fixture_config();
    cfg.seed = 0xFFFFFFFFFFFFFFFFull;
    cfg.manifest = "some/manifest.csv";
    cfg.coarsen.tau = 0.123456789012345678;
    cfg.features.include_lbp = true;
    cfg.model.readout = "max";
    cfg.eval.task = "survival";
    CHECK(tg::config::from_json(tg::config::to_json(cfg)) == cfg);
    CHECK(tg::config::from_json("{}") == tg::config::RunConfig{});

    TempDir tmp("config");
    tg::config::save(tmp.path() / "c.json", cfg);
    CHECK(tg::config::load(tmp.path() / "c.json") == cfg);
}

TEST_CASE("config rejects unknown keys, wrong types and bad values") {
    using tg::ConfigError;
    CHECK_THROWS_AS(tg::config::from_json(mutate([](json& j) { j["bogus"] = 1; })), ConfigError);
    CHECK_THROWS_AS(tg::config::from_json(mutate([](json& j) { j["coarsen"]["bogus"] = 1; })), ConfigError);
    CHECK_THROWS_AS(tg::config::from_json(mutate([](json& j) { j["model"]["hidden"] = "wide"; })), ConfigError);
    CHECK_THROWS_AS(tg::config::from_json(mutate([](json& j) { j["model"]["hidden"] = 1.5; })), ConfigError);
    CHECK_THROWS_AS(tg::config::from_json(mutate([](json& j) { j["seed"] = -1; })), ConfigError);
    CHECK_THROWS_AS(tg::config::from_json(mutate([](json& j) { j["workers"] = 1LL << 40; })), ConfigError);
    CHECK_THROWS_AS(tg::config::from_json(mutate([](json& j) { j["tissue"] = 3; })), ConfigError);
    CHECK_THROWS_AS(tg::config::from_json("{not json"), ConfigError);

    auto bad = tg::config::RunConfig{};
    bad.coarsen.tau = 1.5;
    CHECK_THROWS_AS(tg::config::validate(bad), ConfigError);
    bad = {};
    bad.features.xi = -0.1;
    CHECK_THROWS_AS(tg::config::validate(bad), ConfigError);
    bad = {};
    bad.search.lr_min = 1e-1;
    CHECK_THROWS_AS(tg::config::validate(bad), ConfigError);
    bad = {};
    bad.eval.task = "grade";
    CHECK_THROWS_AS(tg::config::validate(bad), ConfigError);
    CHECK_NOTHROW(tg::config::validate(tg::config::RunConfig{}));
}

TEST_CASE("sha256 known vectors") {
    CHECK(tg::artifacts::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(tg::artifacts::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("label, mask, graph and trace files round trip") {
    TempDir tmp("artifacts");
    tg::superpixel::LabelMap labels(5, 3);
    for (int i = 0; i < 15; ++i) labels.labels[i] = i % 4 == 3 ? tg::superpixel::kBackground : i * 1000;
    labels.region_count = 15;
    tg::artifacts::write_label_png(tmp.path() / "l.png", labels);
    const auto back = tg::artifacts::read_label_png(tmp.path() / "l.png");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.labels == labels.labels);

    tg::tissue::TissueMask mask(4, 2);
    mask.set(1, 0, true);
    mask.set(3, 1, true);
    tg::artifacts::write_mask_png(tmp.path() / "m.png", mask);
    CHECK(tg::artifacts::read_mask_png(tmp.path() / "m.png") == mask);

    tg::RegionGraph g;
    g.nodes = {{0, 10, {0, 0, 3, 2}, {0}}, {4, 25, {1, 1, 6, 5}, {1, 2, 4}}, {7, 1, {2, 2, 3, 3}, {7}}};
    g.edges = {{0, 4}, {4, 7}};
    tg::artifacts::write_graph(tmp.path() / "g.json", g);
    const auto gb = tg::artifacts::read_graph(tmp.path() / "g.json");
    CHECK(gb.nodes == g.nodes);
    CHECK(gb.edges == g.edges);

    const tg::coarsen::MergeTrace trace = {{1, 2, 0.987654321012345, 1}, {1, 4, 0.95, 1}};
    tg::artifacts::write_trace(tmp.path() / "t.json", trace, 0.9);
    CHECK(tg::artifacts::read_trace(tmp.path() / "t.json") == trace);

    tg::artifacts::write_text(tmp.path() / "bad.json", "{\"format\":\"other\"}");
    CHECK_THROWS(tg::artifacts::read_trace(tmp.path() / "bad.json"));
}

TEST_CASE("stage cache publishes complete entries only") {
    TempDir tmp("cache");
    const tg::artifacts::StageCache cache(tmp.path());
    int calls = 0;
    auto produce = [&](const fs::path& dir) {
        ++calls;
        tg::artifacts::write_text(dir / "out.txt", "payload");
    };
    CHECK_FALSE(cache.ensure("stage", "k1", produce));
    CHECK(cache.ensure("stage", "k1", produce));
    CHECK(calls == 1);
    CHECK(tg::artifacts::read_text(cache.entry("stage", "k1") / "out.txt") == "payload");

    CHECK_THROWS(cache.ensure("stage", "k2", [](const fs::path& dir) {
        tg::artifacts::write_text(dir / "partial.txt", "x");
        throw tg::IoError("producer failed");
    }));
    CHECK_FALSE(cache.contains("stage", "k2"));
    CHECK_FALSE(cache.ensure("stage", "k2", produce));
    CHECK(calls == 2);
}

TEST_CASE("nearest neighbour label upscaling") {
    tg::superpixel::LabelMap small(2, 2);
    small.labels = {0, 1, 2, tg::superpixel::kBackground};
    small.region_count = 3;
    const auto big = pl::upscale_labels(small, 3, 7, 5);
    REQUIRE(big.width == 7);
    REQUIRE(big.height == 5);
    CHECK(big.at(0, 0) == 0);
    CHECK(big.at(2, 2) == 0);
    CHECK(big.at(3, 0) == 1);
    CHECK(big.at(6, 2) == 1);
    CHECK(big.at(0, 3) == 2);
    CHECK(big.at(6, 4) == tg::superpixel::kBackground);
    CHECK(pl::upscale_labels(small, 1, 2, 2).labels == small.labels);
}

TEST_CASE("empty manifest gives an empty run") {
    TempDir tmp("empty");
    const auto s = pl::run_pipeline({}, quick_config(tmp.path()));
    CHECK(s.slides.empty());
    CHECK(s.failures == 0);
    CHECK_FALSE(s.trained);
    CHECK(fs::exists(s.run_dir / "config.json"));
    CHECK(fs::exists(s.run_dir / "summary.json"));
}

TEST_CASE("pipeline runs, caches and reproduces") {
    TempDir tmp("pipeline");
    const auto manifest = small_fixture(tmp.path() / "data", 6);
    const auto cfg = quick_config(tmp.path() / "out");

    const auto first = pl::run_pipeline(manifest, cfg);
    REQUIRE(first.slides.size() == 6);
    CHECK(first.failures == 0);
    CHECK(first.trained);
    for (const auto& s : first.slides) {
        CHECK(s.ok);
        CHECK(s.nodes >= 1);
        CHECK(s.nodes <= s.initial_nodes);
        for (const auto& st : s.stages) CHECK_FALSE(st.cache_hit);
        CHECK(fs::exists(first.run_dir / "graphs" / s.slide_id / "graph.json"));
        CHECK(fs::exists(first.run_dir / "graphs" / s.slide_id / "trace.json"));
        CHECK(fs::exists(first.run_dir / "graphs" / s.slide_id / "labels.png"));
    }
    for (const char* f : {"config.json", "features.json", "search.jsonl", "search.txt", "checkpoints/instance-0.tgck",
                          "predictions.csv", "metrics.json", "metrics.txt", "summary.json"})
        CHECK_MESSAGE(fs::exists(first.run_dir / f), f);
    CHECK(tg::config::load(first.run_dir / "config.json") == cfg);

    const auto second = pl::run_pipeline(manifest, cfg);
    CHECK(second.run_dir != first.run_dir);
    for (const auto& s : second.slides)
        for (const auto& st : s.stages) CHECK(st.cache_hit);

    // Rebuilding the cache from scratch gives identical outputs.
    fs::remove_all(cfg.output_root / "cache");
    const auto third = pl::run_pipeline(manifest, cfg);
    auto a = tree_digest(first.run_dir), c = tree_digest(third.run_dir);
    a.erase("summary.json");
    c.erase("summary.json");
    CHECK(a == c);

    // Predictions re-scored equal the recorded test metrics.
    const auto rows = pl::read_predictions(first.run_dir / "predictions.csv");
    const auto table = pl::evaluate_predictions(rows, "stage");
    REQUIRE(table.rows.size() == first.metrics.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        CHECK(table.rows[i].name == first.metrics.rows[i].name);
        if (std::isnan(first.metrics.rows[i].mean)) {
            CHECK(std::isnan(table.rows[i].mean));
        } else {
            CHECK(table.rows[i].mean == first.metrics.rows[i].mean);
        }
    }
    CHECK(pl::format_metric_table(table) == tg::artifacts::read_text(first.run_dir / "metrics.txt"));

    const auto trained = pl::load_run(first.run_dir);
    CHECK(trained.models.size() == 1);
    CHECK(trained.active_features == first.active_features);
    const auto again = pl::predict(trained, manifest, "test");
    REQUIRE(again.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(again[i].probabilities == rows[i].probabilities);
}

TEST_CASE("four-slide fixture lists four graphs with node counts") {
    TempDir tmp("four");
    const auto manifest = small_fixture(tmp.path() / "data", 4);
    const auto s = pl::run_pipeline(manifest, quick_config(tmp.path() / "out"));
    REQUIRE(s.slides.size() == 4);
    const auto j = json::parse(tg::artifacts::read_text(s.run_dir / "summary.json"));
    REQUIRE(j["slides"].size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(j["slides"][i]["slide_id"] == manifest.slides[i].slide_id);
        CHECK(j["slides"][i]["nodes"].get<int>() == s.slides[i].nodes);
        CHECK(s.slides[i].nodes >= 1);
        CHECK(fs::exists(s.run_dir / "graphs" / manifest.slides[i].slide_id / "graph.json"));
    }
}

TEST_CASE("a failing slide is recorded and the rest continue") {
    TempDir tmp("failure");
    auto manifest = small_fixture(tmp.path() / "data", 4);
    manifest.slides[1].image_path = tmp.path() / "missing.png";
    const auto s = pl::run_pipeline(manifest, quick_config(tmp.path() / "out"));
    CHECK(s.failures == 1);
    CHECK_FALSE(s.slides[1].ok);
    CHECK_FALSE(s.slides[1].error.empty());
    CHECK(s.slides[0].ok);
    CHECK(s.slides[2].ok);
    CHECK(s.slides[3].ok);
    const auto j = json::parse(tg::artifacts::read_text(s.run_dir / "summary.json"));
    CHECK(j["slides"][1]["status"] == "failed");
    CHECK(j["failures"] == 1);
}

TEST_CASE("predictions file round trip") {
    TempDir tmp("predictions");
    std::vector<pl::PredictionRow> rows(3);
    rows[0] = {"a", 0, 1, 12.5, true, {0.1, 0.2, 0.3, 0.4}};
    rows[1] = {"b", 0, 0, std::nullopt, std::nullopt, {1.0 / 3, 2.0 / 3, 0, 0}};
    rows[2] = {"a", 1, 1, 12.5, false, {0.7, 0.1, 0.1, 0.1}};
    pl::write_predictions(tmp.path() / "p.csv", rows);
    const auto back = pl::read_predictions(tmp.path() / "p.csv");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].slide_id == rows[i].slide_id);
        CHECK(back[i].instance == rows[i].instance);
        CHECK(back[i].label == rows[i].label);
        CHECK(back[i].time == rows[i].time);
        CHECK(back[i].event == rows[i].event);
        CHECK(back[i].probabilities == rows[i].probabilities);
    }
}

TEST_CASE("metric summary uses sample standard deviation") {
    const auto t = pl::summarize({{{"AUC", 80.0}}, {{"AUC", 90.0}}, {{"AUC", 100.0}}});
    REQUIRE(t.find("AUC") != nullptr);
    CHECK(t.find("AUC")->mean == doctest::Approx(90.0));
    CHECK(t.find("AUC")->stddev == doctest::Approx(10.0));
    CHECK(t.find("F1_m") == nullptr);
}

TEST_CASE("sweep validates every value before running") {
    TempDir tmp("sweep");
    const auto manifest = small_fixture(tmp.path() / "data", 4);
    const auto cfg = quick_config(tmp.path() / "out");
    CHECK_THROWS_AS(pl::sweep(manifest, cfg, "tau", {0.5, 1.5}), tg::ConfigError);
    CHECK_THROWS_AS(pl::sweep(manifest, cfg, "xi", {1.01}), tg::ConfigError);
    CHECK_THROWS_AS(pl::sweep(manifest, cfg, "levels", {1}), tg::ConfigError);
    CHECK_FALSE(fs::exists(cfg.output_root / "runs"));

    const auto table = pl::sweep(manifest, cfg, "tau", {0.9});
    REQUIRE(table.rows.size() == 1);
    const auto direct = pl::run_pipeline(manifest, cfg);
    CHECK(table.rows[0].mean_nodes == direct.mean_nodes);
    CHECK(pl::format_metric_table(table.rows[0].metrics) == pl::format_metric_table(direct.metrics));
    const auto text = pl::format_sweep_table(table);
    CHECK(text.find("Group similarity tau") != std::string::npos);
    CHECK(text.find("0.9") != std::string::npos);
}
