#include "tissuegraph/pipeline.hpp"

#include "tissuegraph/artifacts.hpp"
#include "tissuegraph/attribution.hpp"
#include "tissuegraph/coarsen.hpp"
#include "tissuegraph/error.hpp"
#include "tissuegraph/image_io.hpp"
#include "tissuegraph/superpixel.hpp"
#include "tissuegraph/tissue.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace tissuegraph::pipeline {

using nlohmann::json;
using config::RunConfig;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string digest_of(const json& j) { return artifacts::sha256_hex(j.dump()); }

fs::path nuclei_table(const fs::path& png) {
    auto csv = png;
    return csv.replace_extension(".csv");
}

features::ExtractParams extract_params(const RunConfig& cfg) {
    features::ExtractParams p;
    p.levels = cfg.features.levels;
    p.morph.bright_cutoff = cfg.features.bright_cutoff;
    p.morph.dark_cutoff = cfg.features.dark_cutoff;
    p.include_lbp = cfg.features.include_lbp;
    return p;
}

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

// ---------------------------------------------------------------- stages

raster::RgbImage segmentation_image(const fs::path& image, const RunConfig& cfg) {
    auto img = io::read_rgb(image);
    return cfg.tissue.downsample == 1 ? img : raster::downsample(img, cfg.tissue.downsample);
}

superpixel::LabelMap upscale_labels(const superpixel::LabelMap& labels, int factor, int width, int height) {
    if (factor == 1 && labels.width == width && labels.height == height) return labels;
    superpixel::LabelMap out(width, height);
    out.region_count = labels.region_count;
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(y / factor, labels.height - 1);
        for (int x = 0; x < width; ++x) out.at(x, y) = labels.at(std::min(x / factor, labels.width - 1), sy);
    }
    return out;
}

void mask_stage(const fs::path& image, const fs::path& out_dir, const RunConfig& cfg) {
    const auto img = segmentation_image(image, cfg);
    tissue::MorphologyParams m;
    m.close_radius = cfg.tissue.close_radius;
    m.open_radius = cfg.tissue.open_radius;
    m.min_component_area = cfg.tissue.min_component_area;
    artifacts::write_mask_png(out_dir / "mask.png", tissue::segment_tissue(img, m));
}

void graph_stage(const fs::path& image, const fs::path& mask_dir, const fs::path& out_dir, const RunConfig& cfg) {
    const auto img = segmentation_image(image, cfg);
    const auto mask = artifacts::read_mask_png(mask_dir / "mask.png");
    if (mask.width != img.width() || mask.height != img.height()) {
        throw InvalidArgument("mask and segmentation image sizes differ");
    }
    const auto& s = cfg.segmentation;
    const int k = superpixel::target_region_count(static_cast<double>(mask.area()), s.seg_mag, s.ref_mag, s.target_side);
    superpixel::SlicParams params;
    params.compactness = s.compactness;
    params.iterations = s.iterations;
    params.distance = s.color_distance == "rgb" ? superpixel::ColorDistance::Rgb : superpixel::ColorDistance::Lab;
    const auto labels = superpixel::slic(img, mask, k, params);
    artifacts::write_label_png(out_dir / "labels.png", labels);
    artifacts::write_graph(out_dir / "graph.json", superpixel::build_rag(labels));
}

void coarsen_stage(const fs::path& image, const fs::path& graph_dir, const fs::path& embeddings, const fs::path& out_dir,
                   const RunConfig& cfg) {
    const auto labels = artifacts::read_label_png(graph_dir / "labels.png");
    auto graph = artifacts::read_graph(graph_dir / "graph.json");
    if (embeddings.empty()) {
        const auto rows = coarsen::builtin_embeddings(segmentation_image(image, cfg), labels);
        for (const auto& n : graph.nodes) graph.embeddings.push_back(rows.at(static_cast<std::size_t>(n.id)));
    } else {
        const auto table = coarsen::read_embeddings(embeddings);
        for (const auto& n : graph.nodes) {
            const auto it = table.rows.find(n.id);
            if (it == table.rows.end()) throw InvalidArgument("embedding file has no row for region " + std::to_string(n.id));
            graph.embeddings.push_back(it->second);
        }
    }
    const auto result = coarsen::coarsen(graph, cfg.coarsen.tau);
    artifacts::write_label_png(out_dir / "labels.png", coarsen::flatten_labels(labels, result.trace));
    artifacts::write_graph(out_dir / "graph.json", result.graph);
    artifacts::write_trace(out_dir / "trace.json", result.trace, cfg.coarsen.tau);
}

void features_stage(const fs::path& image, const fs::path& coarse_dir, const fs::path& nuclei, const fs::path& out_dir,
                    const RunConfig& cfg) {
    const auto img = io::read_rgb(image);
    const auto coarse = artifacts::read_label_png(coarse_dir / "labels.png");
    const auto labels = upscale_labels(coarse, cfg.tissue.downsample, img.width(), img.height());
    const auto graph = artifacts::read_graph(coarse_dir / "graph.json");

    std::optional<features::NucleiMap> nuc;
    if (!nuclei.empty()) {
        nuc = features::read_nuclei(nuclei, nuclei_table(nuclei));
        if (nuc->width != img.width() || nuc->height != img.height()) {
            throw InvalidArgument("nuclei map and image sizes differ");
        }
    }
    features::FeatureMatrix m;
    m.names = features::FeatureCatalog::full(cfg.features.include_lbp).names();
    for (const auto& n : graph.nodes) m.node_ids.push_back(n.id);
    m.values = features::extract_node_features(img, labels, nuc ? &*nuc : nullptr, m.node_ids, extract_params(cfg));
    features::write_feature_matrix(out_dir / "features.tgfm", m);
}

std::vector<std::string> prune_feature_files(const std::vector<fs::path>& matrices, double xi) {
    if (matrices.empty()) throw InvalidArgument("prune: no feature matrices");
    std::vector<features::FeatureMatrix> loaded;
    Eigen::Index rows = 0;
    for (const auto& p : matrices) {
        loaded.push_back(features::read_feature_matrix(p));
        if (loaded.back().names != loaded.front().names) throw InvalidArgument("prune: feature matrices have different columns");
        rows += loaded.back().values.rows();
    }
    Eigen::MatrixXd stacked(rows, static_cast<Eigen::Index>(loaded.front().names.size()));
    Eigen::Index at = 0;
    for (const auto& m : loaded) {
        stacked.middleRows(at, m.values.rows()) = m.values;
        at += m.values.rows();
    }
    const auto keep = features::prune_correlated(stacked, xi);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < keep.size(); ++j)
        if (keep[j]) names.push_back(loaded.front().names[j]);
    return names;
}

// --------------------------------------------------------------- metrics

const MetricStat* MetricTable::find(const std::string& name) const {
    for (const auto& r : rows)
        if (r.name == name) return &r;
    return nullptr;
}

std::vector<std::pair<std::string, double>> score_predictions(const Eigen::MatrixXd& probabilities,
                                                              const std::vector<int>& labels,
                                                              const std::vector<double>& times,
                                                              const std::vector<int>& events, const std::string& task) {
    auto guarded = [](auto&& f) {
        try {
            return f();
        } catch (const UndefinedMetric&) {
            return kNaN;
        } catch (const InvalidArgument&) {
            return kNaN;
        }
    };
    std::vector<std::pair<std::string, double>> out;
    if (task == "survival") {
        out.emplace_back("c-index", guarded([&] { return eval::c_index(eval::expected_class(probabilities), times, events); }));
    }
    const auto pred = eval::argmax_rows(probabilities);
    out.emplace_back("AUC", guarded([&] { return eval::auc_macro(probabilities, labels); }));
    out.emplace_back("F1_m", guarded([&] { return eval::f1_macro(pred, labels); }));
    out.emplace_back("Bal. Acc", guarded([&] { return eval::balanced_accuracy(pred, labels); }));
    return out;
}

MetricTable summarize(const std::vector<std::vector<std::pair<std::string, double>>>& per_instance) {
    MetricTable t;
    if (per_instance.empty()) return t;
    const double n = static_cast<double>(per_instance.size());
    for (std::size_t k = 0; k < per_instance.front().size(); ++k) {
        MetricStat s;
        s.name = per_instance.front()[k].first;
        for (const auto& inst : per_instance) s.mean += inst.at(k).second / n;
        double ss = 0;
        for (const auto& inst : per_instance) ss += (inst[k].second - s.mean) * (inst[k].second - s.mean);
        s.stddev = per_instance.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        t.rows.push_back(s);
    }
    return t;
}

std::string format_metric_table(const MetricTable& table) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-10s %8s %8s\n", "metric", "mean", "std");
    out << line;
    for (const auto& r : table.rows) {
        std::snprintf(line, sizeof line, "%-10s %8.2f %8.2f\n", r.name.c_str(), r.mean, r.stddev);
        out << line;
    }
    return out.str();
}

// ----------------------------------------------------------- predictions

void write_predictions(const fs::path& path, const std::vector<PredictionRow>& rows) {
    std::ostringstream out;
    out << "slide_id,instance,label,time,event,p0,p1,p2,p3\n";
    for (const auto& r : rows) {
        out << r.slide_id << ',' << r.instance << ',' << r.label << ',';
        if (r.time) out << fmt("%.17g", *r.time);
        out << ',';
        if (r.event) out << (*r.event ? 1 : 0);
        for (double p : r.probabilities) out << ',' << fmt("%.17g", p);
        out << '\n';
    }
    artifacts::write_text(path, out.str());
}

std::vector<PredictionRow> read_predictions(const fs::path& path) {
    std::istringstream in(artifacts::read_text(path));
    std::string line;
    if (!std::getline(in, line) || line != "slide_id,instance,label,time,event,p0,p1,p2,p3") {
        throw IoError(path.string() + ": not a predictions file");
    }
    std::vector<PredictionRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 9) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
        try {
            PredictionRow r;
            r.slide_id = f[0];
            r.instance = std::stoi(f[1]);
            r.label = std::stoi(f[2]);
            if (!f[3].empty()) r.time = std::stod(f[3]);
            if (!f[4].empty()) r.event = f[4] == "1";
            for (int c = 0; c < gnn::kClassCount; ++c) r.probabilities[c] = std::stod(f[5 + c]);
            rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

MetricTable evaluate_predictions(const std::vector<PredictionRow>& rows, const std::string& task) {
    std::map<int, std::vector<const PredictionRow*>> by_instance;
    for (const auto& r : rows)
        if (r.label >= 0) by_instance[r.instance].push_back(&r);
    std::vector<std::vector<std::pair<std::string, double>>> scores;
    for (const auto& [instance, list] : by_instance) {
        Eigen::MatrixXd probs(static_cast<Eigen::Index>(list.size()), gnn::kClassCount);
        std::vector<int> labels, events;
        std::vector<double> times;
        for (std::size_t i = 0; i < list.size(); ++i) {
            for (int c = 0; c < gnn::kClassCount; ++c) probs(static_cast<Eigen::Index>(i), c) = list[i]->probabilities[c];
            labels.push_back(list[i]->label);
            times.push_back(list[i]->time.value_or(kNaN));
            events.push_back(list[i]->event.value_or(false) ? 1 : 0);
        }
        scores.push_back(score_predictions(probs, labels, times, events, task));
    }
    return summarize(scores);
}

// ------------------------------------------------------------ slide runs

namespace {

SlideResult process_slide(const eval::SlideRecord& rec, const RunConfig& cfg, const artifacts::StageCache& cache) {
    SlideResult r;
    r.slide_id = rec.slide_id;
    r.split = rec.split;
    try {
        const auto image_digest = artifacts::file_digest(rec.image_path);
        const auto& t = cfg.tissue;
        const auto mask_key = digest_of({{"stage", "mask"}, {"version", 1}, {"image", image_digest},
                                         {"params", {t.downsample, t.close_radius, t.open_radius, t.min_component_area}}});
        r.stages.push_back({"mask", cache.ensure("mask", mask_key, [&](const fs::path& dir) {
                                mask_stage(rec.image_path, dir, cfg);
                            })});

        const auto& s = cfg.segmentation;
        const auto graph_key = digest_of({{"stage", "graph"}, {"version", 1}, {"mask", mask_key},
                                          {"params", {s.seg_mag, s.ref_mag, s.target_side, s.compactness, s.iterations,
                                                      s.color_distance}}});
        const auto mask_dir = cache.entry("mask", mask_key);
        r.stages.push_back({"graph", cache.ensure("graph", graph_key, [&](const fs::path& dir) {
                                graph_stage(rec.image_path, mask_dir, dir, cfg);
                            })});

        fs::path embeddings;
        std::string embedding_digest = "builtin";
        if (cfg.coarsen.embeddings == "file") {
            if (rec.embedding_path.empty()) throw InvalidArgument("slide has no embedding_path");
            embeddings = rec.embedding_path;
            embedding_digest = artifacts::file_digest(embeddings);
        }
        const auto coarse_key = digest_of({{"stage", "coarsen"}, {"version", 1}, {"graph", graph_key},
                                           {"tau", cfg.coarsen.tau}, {"embeddings", embedding_digest}});
        const auto graph_dir = cache.entry("graph", graph_key);
        r.stages.push_back({"coarsen", cache.ensure("coarsen", coarse_key, [&](const fs::path& dir) {
                                coarsen_stage(rec.image_path, graph_dir, embeddings, dir, cfg);
                            })});

        std::string nuclei_digest = "none";
        if (!rec.nuclei_path.empty()) {
            nuclei_digest = artifacts::file_digest(rec.nuclei_path) + artifacts::file_digest(nuclei_table(rec.nuclei_path));
        }
        const auto& f = cfg.features;
        const auto feature_key = digest_of({{"stage", "features"}, {"version", 1}, {"coarsen", coarse_key},
                                            {"nuclei", nuclei_digest},
                                            {"params", {f.levels, f.bright_cutoff, f.dark_cutoff, f.include_lbp}}});
        r.coarse_dir = cache.entry("coarsen", coarse_key);
        r.stages.push_back({"features", cache.ensure("features", feature_key, [&](const fs::path& dir) {
                                features_stage(rec.image_path, r.coarse_dir, rec.nuclei_path, dir, cfg);
                            })});
        r.features_dir = cache.entry("features", feature_key);

        r.initial_nodes = static_cast<int>(artifacts::read_graph(graph_dir / "graph.json").nodes.size());
        r.nodes = static_cast<int>(artifacts::read_graph(r.coarse_dir / "graph.json").nodes.size());
        r.ok = true;
    } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
    }
    return r;
}

struct SlideGraph {
    gnn::GraphInput input;
    std::vector<int> node_ids;
};

SlideGraph load_slide_graph(const SlideResult& s, const std::vector<std::string>& active) {
    const auto graph = artifacts::read_graph(s.coarse_dir / "graph.json");
    const auto m = features::select_columns(features::read_feature_matrix(s.features_dir / "features.tgfm"), active);
    SlideGraph out;
    out.input.features = m.values;
    out.node_ids = m.node_ids;
    for (auto [a, b] : graph.edges) out.input.edges.emplace_back(graph.index_of(a), graph.index_of(b));
    return out;
}

// Class label per slide, or nullopt when the slide cannot be labelled.
std::vector<std::optional<int>> slide_labels(const eval::Manifest& manifest, const std::vector<SlideResult>& slides,
                                             const std::string& task, std::vector<std::string>& warnings) {
    std::vector<std::optional<int>> labels(manifest.slides.size());
    if (task == "stage") {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            labels[i] = manifest.slides[i].stage;
            if (slides[i].ok && !labels[i]) warnings.push_back("slide " + slides[i].slide_id + " has no stage");
        }
        return labels;
    }
    std::vector<std::size_t> idx;
    std::vector<double> times;
    std::vector<int> events;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& rec = manifest.slides[i];
        if (!slides[i].ok) continue;
        if (!rec.time || !rec.event) {
            warnings.push_back("slide " + rec.slide_id + " has no survival data");
            continue;
        }
        idx.push_back(i);
        times.push_back(*rec.time);
        events.push_back(*rec.event ? 1 : 0);
    }
    try {
        const auto bins = eval::discretize_survival(times, events);
        for (std::size_t k = 0; k < idx.size(); ++k) labels[idx[k]] = bins[k];
    } catch (const InvalidArgument& e) {
        warnings.push_back(std::string("survival labels unavailable: ") + e.what());
    }
    return labels;
}

fs::path next_run_dir(const fs::path& root) {
    fs::create_directories(root / "runs");
    for (int n = 1;; ++n) {
        char name[32];
        std::snprintf(name, sizeof name, "run-%04d", n);
        const auto dir = root / "runs" / name;
        if (fs::create_directory(dir)) return dir;
    }
}

json metrics_json(const MetricTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows) rows.push_back({{"name", r.name}, {"mean", finite_or_null(r.mean)}, {"std", finite_or_null(r.stddev)}});
    return rows;
}

struct Split {
    std::vector<gnn::LabeledGraph> graphs;
    std::vector<std::size_t> slide_index;
    std::vector<double> times;
    std::vector<int> events;

    std::vector<int> labels() const {
        std::vector<int> out;
        for (const auto& g : graphs) out.push_back(g.label);
        return out;
    }
};

Eigen::MatrixXd probabilities(const gnn::GatModel& model, const Split& split) {
    Eigen::MatrixXd p(static_cast<Eigen::Index>(split.graphs.size()), gnn::kClassCount);
    for (std::size_t i = 0; i < split.graphs.size(); ++i) {
        const auto row = gnn::predict(model, split.graphs[i].graph);
        for (int c = 0; c < gnn::kClassCount; ++c) p(static_cast<Eigen::Index>(i), c) = row[c];
    }
    return p;
}

double explain_graph(const gnn::GatModel& model, const SlideGraph& slide, const fs::path& coarse_dir,
                     const raster::RgbImage& base, const attribution::DatasetStats& stats, int target, int steps, int top_k,
                     const fs::path& out_dir) {
    if (target < 0) target = attribution::predicted_class(model, slide.input);
    const auto report = attribution::integrated_gradients(model, slide.input, target, steps);
    std::vector<std::string> warnings;
    const auto top = attribution::explain_features(report, slide.input.features, stats, top_k, &warnings);
    fs::create_directories(out_dir);
    attribution::write_report(out_dir / "report.json", report, slide.node_ids, top);

    auto labels = artifacts::read_label_png(coarse_dir / "labels.png");
    std::map<int, int> position;
    for (std::size_t i = 0; i < slide.node_ids.size(); ++i) position[slide.node_ids[i]] = static_cast<int>(i);
    for (auto& v : labels.labels)
        if (v != superpixel::kBackground) v = position.at(v);
    labels.region_count = static_cast<int>(slide.node_ids.size());
    io::write_png_rgb(out_dir / "overlay.png", attribution::render_overlay(labels, attribution::region_importance(report), base));
    return report.completeness_gap;
}

Eigen::MatrixXd stack_rows(const std::vector<const Eigen::MatrixXd*>& blocks, Eigen::Index cols) {
    Eigen::Index rows = 0;
    for (const auto* b : blocks) rows += b->rows();
    Eigen::MatrixXd out(rows, cols);
    Eigen::Index at = 0;
    for (const auto* b : blocks) {
        out.middleRows(at, b->rows()) = *b;
        at += b->rows();
    }
    return out;
}

void copy_into(const fs::path& from, const fs::path& to) {
    fs::copy_file(from, to, fs::copy_options::overwrite_existing);
}

} // namespace

std::vector<SlideResult> process_slides(const eval::Manifest& manifest, const RunConfig& cfg) {
    config::validate(cfg);
    const artifacts::StageCache cache(cfg.output_root / "cache");
    std::vector<SlideResult> results(manifest.slides.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < results.size(); i = next++) results[i] = process_slide(manifest.slides[i], cfg, cache);
    };
    const int workers = std::min<int>(cfg.workers, static_cast<int>(std::max<std::size_t>(1, results.size())));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return results;
}

RunSummary run_pipeline(const eval::Manifest& manifest, const RunConfig& cfg) {
    config::validate(cfg);
    RunSummary summary;
    fs::create_directories(cfg.output_root);
    summary.run_dir = next_run_dir(cfg.output_root);
    const auto& run = summary.run_dir;
    config::save(run / "config.json", cfg);

    summary.slides = process_slides(manifest, cfg);
    fs::create_directories(run / "graphs");
    int ok_count = 0;
    for (const auto& s : summary.slides) {
        if (!s.ok) {
            ++summary.failures;
            continue;
        }
        ++ok_count;
        summary.mean_nodes += s.nodes;
        const auto dir = run / "graphs" / s.slide_id;
        fs::create_directories(dir);
        for (const char* name : {"graph.json", "trace.json", "labels.png"}) copy_into(s.coarse_dir / name, dir / name);
    }
    if (ok_count > 0) summary.mean_nodes /= ok_count;

    const auto labels = slide_labels(manifest, summary.slides, cfg.eval.task, summary.warnings);

    // Pruning uses training rows only.
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < summary.slides.size(); ++i)
        if (summary.slides[i].ok && labels[i]) usable.push_back(i);
    std::vector<fs::path> train_matrices;
    for (auto i : usable)
        if (summary.slides[i].split == "train") train_matrices.push_back(summary.slides[i].features_dir / "features.tgfm");

    auto finish = [&] {
        json slides = json::array();
        for (const auto& s : summary.slides) {
            json stages = json::object();
            for (const auto& st : s.stages) stages[st.name] = st.cache_hit ? "hit" : "miss";
            json entry = {{"slide_id", s.slide_id}, {"split", s.split}, {"status", s.ok ? "ok" : "failed"}, {"stages", stages}};
            if (s.ok) {
                entry["initial_nodes"] = s.initial_nodes;
                entry["nodes"] = s.nodes;
            } else {
                entry["error"] = s.error;
            }
            slides.push_back(entry);
        }
        const json j = {{"slides", slides},
                        {"failures", summary.failures},
                        {"warnings", summary.warnings},
                        {"trained", summary.trained},
                        {"active_features", summary.active_features.size()},
                        {"mean_nodes", summary.mean_nodes},
                        {"metrics", metrics_json(summary.metrics)}};
        artifacts::write_text(run / "summary.json", j.dump(2) + "\n");
        return summary;
    };

    if (train_matrices.empty()) {
        if (!summary.slides.empty()) summary.warnings.push_back("no labelled training slides; training skipped");
        return finish();
    }

    const auto all_names = features::read_feature_matrix(train_matrices.front()).names;
    Eigen::Index train_rows = 0;
    for (const auto& p : train_matrices) train_rows += features::read_feature_matrix(p).values.rows();
    summary.active_features = train_rows >= 2 ? prune_feature_files(train_matrices, cfg.features.xi) : all_names;
    artifacts::write_text(run / "features.json",
                          json({{"xi", cfg.features.xi}, {"train_rows", train_rows}, {"active", summary.active_features}}).dump(2) + "\n");

    std::map<std::string, Split> splits;
    std::vector<SlideGraph> graphs(summary.slides.size());
    for (auto i : usable) {
        graphs[i] = load_slide_graph(summary.slides[i], summary.active_features);
        auto& split = splits[summary.slides[i].split];
        split.graphs.push_back({graphs[i].input, *labels[i]});
        split.slide_index.push_back(i);
        const auto& rec = manifest.slides[i];
        split.times.push_back(rec.time.value_or(kNaN));
        split.events.push_back(rec.event.value_or(false) ? 1 : 0);
    }
    const Split& train_set = splits["train"];
    const Split& val_set = splits["val"];
    const Split& test_set = splits["test"];
    const std::string& task = cfg.eval.task;
    const std::string selection = task == "survival" ? "c-index" : "AUC";
    auto metric_of = [](const std::vector<std::pair<std::string, double>>& m, const std::string& name) {
        for (const auto& [k, v] : m)
            if (k == name) return v;
        return kNaN;
    };

    eval::SearchConfig sc;
    sc.trials = cfg.search.trials;
    sc.instances = cfg.search.instances;
    sc.lr_min = cfg.search.lr_min;
    sc.lr_max = cfg.search.lr_max;
    sc.wd_min = cfg.search.wd_min;
    sc.wd_max = cfg.search.wd_max;
    sc.seed = cfg.seed;

    // Models and test scores of the best trial seen so far, chosen with the
    // same rule as the search itself.
    struct TrialModels {
        std::vector<gnn::GatModel> models;
        std::vector<std::vector<std::pair<std::string, double>>> test_scores;
        double mean_validation = 0;
    };
    TrialModels current, best;
    int call = 0, best_trial = -1;
    auto train_one = [&](double lr, double wd, std::uint64_t seed, TrialModels& into) {
        auto result = gnn::train(train_set.graphs, val_set.graphs, config::train_config(cfg, lr, wd, seed));
        const double val = val_set.graphs.empty()
                               ? kNaN
                               : metric_of(score_predictions(probabilities(result.model, val_set), val_set.labels(),
                                                             val_set.times, val_set.events, task),
                                           selection);
        auto test = score_predictions(test_set.graphs.empty() ? Eigen::MatrixXd(0, gnn::kClassCount)
                                                              : probabilities(result.model, test_set),
                                      test_set.labels(), test_set.times, test_set.events, task);
        into.models.push_back(std::move(result.model));
        into.test_scores.push_back(test);
        return std::make_pair(val, metric_of(test, selection));
    };
    const auto search = eval::random_search(sc, [&](double lr, double wd, std::uint64_t seed) {
        const int trial = call / sc.instances;
        const int instance = call % sc.instances;
        ++call;
        if (instance == 0) current = {};
        const auto scores = train_one(lr, wd, seed, current);
        current.mean_validation += scores.first / sc.instances;
        if (instance == sc.instances - 1 && (best_trial < 0 || current.mean_validation > best.mean_validation)) {
            best = std::move(current);
            best_trial = trial;
        }
        return scores;
    });
    if (best_trial != search.best) {
        best = {};
        const auto& t = search.best_trial();
        for (const auto& inst : t.instances) train_one(t.lr, t.weight_decay, inst.seed, best);
    }
    summary.search = search;
    summary.trained = true;
    eval::write_search_jsonl(run / "search.jsonl", search);
    artifacts::write_text(run / "search.txt", eval::format_search_summary(search, selection));

    fs::create_directories(run / "checkpoints");
    std::vector<PredictionRow> predictions;
    for (std::size_t k = 0; k < best.models.size(); ++k) {
        gnn::save_checkpoint(run / "checkpoints" / ("instance-" + std::to_string(k) + ".tgck"), best.models[k]);
        const auto probs = test_set.graphs.empty() ? Eigen::MatrixXd(0, gnn::kClassCount) : probabilities(best.models[k], test_set);
        for (std::size_t i = 0; i < test_set.graphs.size(); ++i) {
            const auto& rec = manifest.slides[test_set.slide_index[i]];
            PredictionRow row;
            row.slide_id = rec.slide_id;
            row.instance = static_cast<int>(k);
            row.label = test_set.graphs[i].label;
            row.time = rec.time;
            row.event = rec.event;
            for (int c = 0; c < gnn::kClassCount; ++c) row.probabilities[c] = probs(static_cast<Eigen::Index>(i), c);
            predictions.push_back(row);
        }
    }
    write_predictions(run / "predictions.csv", predictions);
    summary.metrics = summarize(best.test_scores);
    json per_instance = json::array();
    for (std::size_t k = 0; k < best.test_scores.size(); ++k) {
        json m = json::object();
        for (const auto& [name, v] : best.test_scores[k]) m[name] = finite_or_null(v);
        per_instance.push_back({{"instance", k}, {"seed", search.best_trial().instances[k].seed}, {"metrics", m}});
    }
    const json metrics = {{"task", task},
                          {"split", "test"},
                          {"auc_averaging", "macro one-vs-rest"},
                          {"best_trial", search.best},
                          {"lr", search.best_trial().lr},
                          {"weight_decay", search.best_trial().weight_decay},
                          {"metrics", metrics_json(summary.metrics)},
                          {"instances", per_instance}};
    artifacts::write_text(run / "metrics.json", metrics.dump(2) + "\n");
    artifacts::write_text(run / "metrics.txt", format_metric_table(summary.metrics));

    if (cfg.explain.max_slides > 0 && !test_set.graphs.empty()) {
        std::vector<const Eigen::MatrixXd*> blocks;
        for (const auto& g : train_set.graphs) blocks.push_back(&g.graph.features);
        const auto stats = attribution::DatasetStats::fit(
            stack_rows(blocks, static_cast<Eigen::Index>(summary.active_features.size())), summary.active_features);
        const auto count = std::min<std::size_t>(test_set.graphs.size(), static_cast<std::size_t>(cfg.explain.max_slides));
        for (std::size_t i = 0; i < count; ++i) {
            const auto idx = test_set.slide_index[i];
            const auto& rec = manifest.slides[idx];
            explain_graph(best.models.front(), graphs[idx], summary.slides[idx].coarse_dir,
                          segmentation_image(rec.image_path, cfg), stats, -1, cfg.explain.steps, cfg.explain.top_k,
                          run / "explanations" / rec.slide_id);
        }
    }
    return finish();
}

// ----------------------------------------------------------------- sweep

SweepTable sweep(const eval::Manifest& manifest, const RunConfig& cfg, const std::string& param,
                 const std::vector<double>& values) {
    if (param != "tau" && param != "xi") throw ConfigError("sweep parameter must be tau or xi");
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    std::vector<RunConfig> configs;
    for (double v : values) {
        auto c = cfg;
        (param == "tau" ? c.coarsen.tau : c.features.xi) = v;
        config::validate(c);
        configs.push_back(std::move(c));
    }
    SweepTable table;
    table.param = param;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto s = run_pipeline(manifest, configs[i]);
        table.rows.push_back({values[i], s.metrics, s.mean_nodes, s.run_dir});
    }
    return table;
}

std::string format_sweep_table(const SweepTable& table) {
    std::vector<std::string> metrics;
    for (const auto& r : table.rows)
        for (const auto& m : r.metrics.rows)
            if (std::find(metrics.begin(), metrics.end(), m.name) == metrics.end()) metrics.push_back(m.name);
    std::ostringstream out;
    out << (table.param == "tau" ? "Group similarity tau" : "Correlation threshold xi") << "\n";
    char cell[64];
    std::snprintf(cell, sizeof cell, "%-8s", "Value");
    out << cell;
    for (const auto& m : metrics) {
        std::snprintf(cell, sizeof cell, " %-16s", m.c_str());
        out << cell;
    }
    out << " Nodes\n";
    for (const auto& r : table.rows) {
        auto value = fmt("%g", r.value);
        if (value.find_first_of(".e") == std::string::npos) value += ".0";
        std::snprintf(cell, sizeof cell, "%-8s", value.c_str());
        out << cell;
        for (const auto& m : metrics) {
            const auto* s = r.metrics.find(m);
            if (s) {
                std::snprintf(cell, sizeof cell, " %-16s", (fmt("%.1f", s->mean) + " (" + fmt("%.2f", s->stddev) + ")").c_str());
            } else {
                std::snprintf(cell, sizeof cell, " %-16s", "-");
            }
            out << cell;
        }
        out << ' ' << fmt("%.2f", r.mean_nodes) << "\n";
    }
    return out.str();
}

// --------------------------------------------------------------- run dirs

TrainedRun load_run(const fs::path& run_dir) {
    TrainedRun run;
    run.config = config::load(run_dir / "config.json");
    try {
        const auto j = json::parse(artifacts::read_text(run_dir / "features.json"));
        run.active_features = j.at("active").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw IoError((run_dir / "features.json").string() + ": " + e.what());
    }
    for (int k = 0;; ++k) {
        const auto p = run_dir / "checkpoints" / ("instance-" + std::to_string(k) + ".tgck");
        if (!fs::exists(p)) break;
        run.models.push_back(gnn::load_checkpoint(p));
    }
    if (run.models.empty()) throw IoError(run_dir.string() + ": no checkpoints");
    return run;
}

std::vector<PredictionRow> predict(const TrainedRun& run, const eval::Manifest& manifest, const std::string& split) {
    eval::Manifest chosen;
    for (const auto& s : manifest.slides)
        if (split.empty() || s.split == split) chosen.slides.push_back(s);
    const auto slides = process_slides(chosen, run.config);
    std::vector<std::string> warnings;
    const auto labels = slide_labels(chosen, slides, run.config.eval.task, warnings);
    std::vector<PredictionRow> rows;
    for (std::size_t k = 0; k < run.models.size(); ++k) {
        for (std::size_t i = 0; i < slides.size(); ++i) {
            if (!slides[i].ok) throw Error("slide " + slides[i].slide_id + ": " + slides[i].error);
            const auto g = load_slide_graph(slides[i], run.active_features);
            PredictionRow row;
            row.slide_id = slides[i].slide_id;
            row.instance = static_cast<int>(k);
            row.label = labels[i].value_or(-1);
            row.time = chosen.slides[i].time;
            row.event = chosen.slides[i].event;
            row.probabilities = gnn::predict(run.models[k], g.input);
            rows.push_back(row);
        }
    }
    return rows;
}

double explain_slide(const TrainedRun& run, const eval::Manifest& manifest, const std::string& slide_id, int target_class,
                     int steps, const fs::path& out_dir) {
    if (target_class >= gnn::kClassCount) throw InvalidArgument("class must be below " + std::to_string(gnn::kClassCount));
    eval::Manifest train, one;
    for (const auto& s : manifest.slides) {
        if (s.split == "train") train.slides.push_back(s);
        if (s.slide_id == slide_id) one.slides.push_back(s);
    }
    if (one.slides.empty()) throw InvalidArgument("slide " + slide_id + " is not in the manifest");
    const auto train_results = process_slides(train, run.config);
    std::vector<Eigen::MatrixXd> train_features;
    for (const auto& s : train_results)
        if (s.ok) train_features.push_back(load_slide_graph(s, run.active_features).input.features);
    if (train_features.empty()) throw InvalidArgument("explain needs the training slides for reference statistics");
    std::vector<const Eigen::MatrixXd*> blocks;
    for (const auto& m : train_features) blocks.push_back(&m);
    const auto stats = attribution::DatasetStats::fit(
        stack_rows(blocks, static_cast<Eigen::Index>(run.active_features.size())), run.active_features);

    const auto target = process_slides(one, run.config).front();
    if (!target.ok) throw Error("slide " + slide_id + ": " + target.error);
    const auto graph = load_slide_graph(target, run.active_features);
    return explain_graph(run.models.front(), graph, target.coarse_dir, segmentation_image(one.slides.front().image_path, run.config),
                         stats, target_class, steps, run.config.explain.top_k, out_dir);
}

} // namespace tissuegraph::pipeline
