#include "tissuegraph/coarsen.hpp"
#include "tissuegraph/config.hpp"
#include "tissuegraph/error.hpp"
#include "tissuegraph/eval.hpp"
#include "tissuegraph/features.hpp"
#include "tissuegraph/pipeline.hpp"
#include "tissuegraph/synth.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

namespace py = pybind11;
namespace fs = std::filesystem;
namespace tg = tissuegraph;
namespace pl = tissuegraph::pipeline;

namespace {

using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;
using RealArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<int> ints(const IntArray& a) { return {a.data(), a.data() + a.size()}; }
std::vector<double> reals(const RealArray& a) { return {a.data(), a.data() + a.size()}; }

tg::config::RunConfig parse_config(const std::string& text) {
    auto cfg = text.empty() ? tg::config::RunConfig{} : tg::config::from_json(text);
    tg::config::validate(cfg);
    return cfg;
}

py::object nan_to_none(double v) { return std::isnan(v) ? py::none() : py::cast(v); }

py::dict metrics_dict(const pl::MetricTable& t) {
    py::dict out;
    for (const auto& r : t.rows) out[py::str(r.name)] = py::make_tuple(nan_to_none(r.mean), nan_to_none(r.stddev));
    return out;
}

py::dict summary_dict(const pl::RunSummary& s) {
    py::list slides;
    for (const auto& r : s.slides) {
        py::dict d;
        d["slide_id"] = r.slide_id;
        d["split"] = r.split;
        d["ok"] = r.ok;
        d["error"] = r.error;
        d["initial_nodes"] = r.initial_nodes;
        d["nodes"] = r.nodes;
        py::dict stages;
        for (const auto& st : r.stages) stages[py::str(st.name)] = st.cache_hit;
        d["cache_hits"] = stages;
        slides.append(d);
    }
    py::dict out;
    out["run_dir"] = s.run_dir;
    out["slides"] = slides;
    out["failures"] = s.failures;
    out["warnings"] = s.warnings;
    out["trained"] = s.trained;
    out["active_features"] = s.active_features;
    out["metrics"] = metrics_dict(s.metrics);
    out["mean_nodes"] = s.mean_nodes;
    return out;
}

tg::features::GrayRegion gray_region(const RealArray& values, const IntArray& inside) {
    if (values.ndim() != 2) throw tg::InvalidArgument("values must be a 2-D array");
    if (inside.ndim() != 2 || inside.shape(0) != values.shape(0) || inside.shape(1) != values.shape(1))
        throw tg::InvalidArgument("mask must match the value array");
    tg::features::GrayRegion r;
    r.height = static_cast<int>(values.shape(0));
    r.width = static_cast<int>(values.shape(1));
    r.values = reals(values);
    for (auto v : ints(inside)) r.inside.push_back(v != 0 ? 1 : 0);
    return r;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Tissue graph pipeline core";

    // Later registrations are tried first, so the base class goes first.
    py::register_exception<tg::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<tg::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<tg::InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<tg::UndefinedMetric>(m, "UndefinedMetric", PyExc_ValueError);

    // ---------------------------------------------------------------- config
    m.def("default_config", [] { return tg::config::to_json(tg::config::RunConfig{}); },
          "Default run configuration as JSON text.");
    m.def("fixture_config", [] { return tg::config::to_json(tg::synth::fixture_config()); },
          "Run configuration sized for the synthetic fixture, as JSON text.");
    m.def("normalize_config", [](const std::string& text) { return tg::config::to_json(parse_config(text)); },
          py::arg("config_json"), "Validated configuration with every key filled in.");

    // ------------------------------------------------------------- features
    m.def("feature_names", [](bool include_lbp) { return tg::features::FeatureCatalog::full(include_lbp).names(); },
          py::arg("include_lbp") = false);
    m.def("texture_features",
          [](const RealArray& values, const IntArray& inside, int levels) {
              return tg::features::extract_texture(gray_region(values, inside), levels);
          },
          py::arg("values"), py::arg("mask"), py::arg("levels") = 32,
          "93 texture features of the masked region of a 2-D gray array.");
    m.def("prune_correlated",
          [](const Eigen::MatrixXd& samples, double xi) { return tg::features::prune_correlated(samples, xi); },
          py::arg("samples"), py::arg("xi"), "Active flag per column after greedy correlation pruning.");

    // -------------------------------------------------------------- coarsen
    m.def("coarsen",
          [](const std::vector<std::vector<double>>& embeddings, const std::vector<std::pair<int, int>>& edges,
             const std::vector<std::int64_t>& pixel_counts, double tau) {
              tg::RegionGraph g;
              for (std::size_t i = 0; i < embeddings.size(); ++i) {
                  const int id = static_cast<int>(i);
                  g.nodes.push_back({id, pixel_counts.empty() ? 1 : pixel_counts.at(i), {id, 0, id + 1, 1}, {id}});
              }
              g.edges = edges;
              g.embeddings = embeddings;
              const auto r = tg::coarsen::coarsen(g, tau);
              py::list nodes, trace;
              for (const auto& n : r.graph.nodes) nodes.append(py::make_tuple(n.id, n.pixel_count, n.members));
              for (const auto& s : r.trace) trace.append(py::make_tuple(s.a, s.b, s.similarity, s.merged_id));
              py::dict out;
              out["nodes"] = nodes;
              out["edges"] = r.graph.edges;
              out["trace"] = trace;
              return out;
          },
          py::arg("embeddings"), py::arg("edges"), py::arg("pixel_counts") = std::vector<std::int64_t>{},
          py::arg("tau"), "Greedy similarity merging of a region graph.");

    // -------------------------------------------------------------- metrics
    m.def("auc_macro",
          [](const Eigen::MatrixXd& probs, const IntArray& labels) { return tg::eval::auc_macro(probs, ints(labels)); },
          py::arg("probabilities"), py::arg("labels"));
    m.def("f1_macro",
          [](const IntArray& pred, const IntArray& labels) { return tg::eval::f1_macro(ints(pred), ints(labels)); },
          py::arg("predictions"), py::arg("labels"));
    m.def("balanced_accuracy",
          [](const IntArray& pred, const IntArray& labels) {
              return tg::eval::balanced_accuracy(ints(pred), ints(labels));
          },
          py::arg("predictions"), py::arg("labels"));
    m.def("c_index",
          [](const RealArray& risks, const RealArray& times, const IntArray& events) {
              return tg::eval::c_index(reals(risks), reals(times), ints(events));
          },
          py::arg("risks"), py::arg("times"), py::arg("events"));
    m.def("discretize_survival",
          [](const RealArray& times, const IntArray& events, int bins) {
              return tg::eval::discretize_survival(reals(times), ints(events), bins);
          },
          py::arg("times"), py::arg("events"), py::arg("bins") = 4);
    m.def("t_test", [](const RealArray& a, const RealArray& b) { return tg::eval::t_test(reals(a), reals(b)); },
          py::arg("a"), py::arg("b"));

    // ------------------------------------------------------------- pipeline
    m.def("synth",
          [](const fs::path& out, int count, int size, std::uint64_t seed) {
              tg::synth::SynthParams p;
              p.count = count;
              p.width = p.height = size;
              p.seed = seed;
              return tg::synth::generate(out, p).slides.size();
          },
          py::arg("out"), py::arg("count") = 200, py::arg("size") = 96, py::arg("seed") = 0,
          "Writes the synthetic fixture and returns the number of slides.");
    m.def("run",
          [](const std::string& config_json) {
              const auto cfg = parse_config(config_json);
              const auto manifest = tg::eval::read_manifest(cfg.manifest);
              pl::RunSummary s;
              {
                  py::gil_scoped_release release;
                  s = pl::run_pipeline(manifest, cfg);
              }
              return summary_dict(s);
          },
          py::arg("config_json"), "Full pipeline run; returns the run summary.");
    m.def("sweep",
          [](const std::string& config_json, const std::string& param, const std::vector<double>& values) {
              const auto cfg = parse_config(config_json);
              const auto manifest = tg::eval::read_manifest(cfg.manifest);
              pl::SweepTable t;
              {
                  py::gil_scoped_release release;
                  t = pl::sweep(manifest, cfg, param, values);
              }
              py::list rows;
              for (const auto& r : t.rows) {
                  py::dict d;
                  d["value"] = r.value;
                  d["metrics"] = metrics_dict(r.metrics);
                  d["mean_nodes"] = r.mean_nodes;
                  d["run_dir"] = r.run_dir;
                  rows.append(d);
              }
              return py::make_tuple(rows, pl::format_sweep_table(t));
          },
          py::arg("config_json"), py::arg("param"), py::arg("values"),
          "Sweep over tau or xi; returns (rows, table text).");
    m.def("predict",
          [](const fs::path& run_dir, const std::string& split) {
              const auto trained = pl::load_run(run_dir);
              const auto rows = pl::predict(trained, tg::eval::read_manifest(trained.config.manifest), split);
              py::list out;
              for (const auto& r : rows) {
                  py::dict d;
                  d["slide_id"] = r.slide_id;
                  d["instance"] = r.instance;
                  d["label"] = r.label;
                  d["probabilities"] = std::vector<double>(r.probabilities.begin(), r.probabilities.end());
                  out.append(d);
              }
              return out;
          },
          py::arg("run_dir"), py::arg("split") = "test");
    m.def("explain",
          [](const fs::path& run_dir, const std::string& slide_id, const fs::path& out_dir, int target_class, int steps) {
              const auto trained = pl::load_run(run_dir);
              const int m_steps = steps > 0 ? steps : trained.config.explain.steps;
              return pl::explain_slide(trained, tg::eval::read_manifest(trained.config.manifest), slide_id, target_class,
                                       m_steps, out_dir);
          },
          py::arg("run_dir"), py::arg("slide_id"), py::arg("out_dir"), py::arg("target_class") = -1,
          py::arg("steps") = 0, "Writes overlay.png and report.json; returns the completeness gap.");
    m.def("evaluate",
          [](const fs::path& predictions, const std::string& task) {
              return metrics_dict(pl::evaluate_predictions(pl::read_predictions(predictions), task));
          },
          py::arg("predictions"), py::arg("task") = "stage");
}
