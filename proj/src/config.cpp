#include "tissuegraph/config.hpp"

#include "tissuegraph/error.hpp"

#include <json.hpp>

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace tissuegraph::config {

using nlohmann::json;

namespace {

// Reads the members of one JSON object and rejects anything it was not asked for.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ConfigError(label() + " must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_unsigned_v<T>) {
                if (!it->is_number_unsigned()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw ConfigError("");
                const auto wide = it->template get<std::int64_t>();
                if (wide < std::numeric_limits<T>::min() || wide > std::numeric_limits<T>::max()) throw ConfigError("");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw ConfigError("");
            } else {
                if (!it->is_string()) throw ConfigError("");
            }
            if constexpr (std::is_same_v<T, std::filesystem::path>) {
                out = it->template get<std::string>();
            } else {
                out = it->template get<T>();
            }
        } catch (const std::exception&) {
            throw ConfigError(label() + "." + key + " has the wrong type");
        }
    }

    Section child(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        static const json empty = json::object();
        return Section(it == j_.end() ? empty : *it, name_.empty() ? key : name_ + "." + key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError("unknown config key " + (name_.empty() ? key : name_ + "." + key));
        }
    }

private:
    std::string label() const { return name_.empty() ? "config" : name_; }

    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config value: " + what);
}

} // namespace

std::string to_json(const RunConfig& c) {
    json j;
    j["manifest"] = c.manifest.string();
    j["output_root"] = c.output_root.string();
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["tissue"] = {{"downsample", c.tissue.downsample},
                   {"close_radius", c.tissue.close_radius},
                   {"open_radius", c.tissue.open_radius},
                   {"min_component_area", c.tissue.min_component_area}};
    j["segmentation"] = {{"seg_mag", c.segmentation.seg_mag},
                         {"ref_mag", c.segmentation.ref_mag},
                         {"target_side", c.segmentation.target_side},
                         {"compactness", c.segmentation.compactness},
                         {"iterations", c.segmentation.iterations},
                         {"color_distance", c.segmentation.color_distance}};
    j["coarsen"] = {{"tau", c.coarsen.tau}, {"embeddings", c.coarsen.embeddings}};
    j["features"] = {{"levels", c.features.levels},
                     {"bright_cutoff", c.features.bright_cutoff},
                     {"dark_cutoff", c.features.dark_cutoff},
                     {"include_lbp", c.features.include_lbp},
                     {"xi", c.features.xi}};
    j["model"] = {{"hidden", c.model.hidden},
                  {"layers", c.model.layers},
                  {"heads", c.model.heads},
                  {"mlp_hidden", c.model.mlp_hidden},
                  {"dropout", c.model.dropout},
                  {"readout", c.model.readout},
                  {"class_weighting", c.model.class_weighting},
                  {"optimizer", c.model.optimizer},
                  {"epochs", c.model.epochs},
                  {"batch_size", c.model.batch_size}};
    j["search"] = {{"trials", c.search.trials},     {"instances", c.search.instances},
                   {"lr_min", c.search.lr_min},     {"lr_max", c.search.lr_max},
                   {"wd_min", c.search.wd_min},     {"wd_max", c.search.wd_max}};
    j["explain"] = {{"steps", c.explain.steps}, {"top_k", c.explain.top_k}, {"max_slides", c.explain.max_slides}};
    j["eval"] = {{"task", c.eval.task}};
    return j.dump(2) + "\n";
}

RunConfig from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig c;
    Section root(j, "");
    root.get("manifest", c.manifest);
    root.get("output_root", c.output_root);
    root.get("seed", c.seed);
    root.get("workers", c.workers);

    auto t = root.child("tissue");
    t.get("downsample", c.tissue.downsample);
    t.get("close_radius", c.tissue.close_radius);
    t.get("open_radius", c.tissue.open_radius);
    t.get("min_component_area", c.tissue.min_component_area);
    t.finish();

    auto s = root.child("segmentation");
    s.get("seg_mag", c.segmentation.seg_mag);
    s.get("ref_mag", c.segmentation.ref_mag);
    s.get("target_side", c.segmentation.target_side);
    s.get("compactness", c.segmentation.compactness);
    s.get("iterations", c.segmentation.iterations);
    s.get("color_distance", c.segmentation.color_distance);
    s.finish();

    auto co = root.child("coarsen");
    co.get("tau", c.coarsen.tau);
    co.get("embeddings", c.coarsen.embeddings);
    co.finish();

    auto f = root.child("features");
    f.get("levels", c.features.levels);
    f.get("bright_cutoff", c.features.bright_cutoff);
    f.get("dark_cutoff", c.features.dark_cutoff);
    f.get("include_lbp", c.features.include_lbp);
    f.get("xi", c.features.xi);
    f.finish();

    auto m = root.child("model");
    m.get("hidden", c.model.hidden);
    m.get("layers", c.model.layers);
    m.get("heads", c.model.heads);
    m.get("mlp_hidden", c.model.mlp_hidden);
    m.get("dropout", c.model.dropout);
    m.get("readout", c.model.readout);
    m.get("class_weighting", c.model.class_weighting);
    m.get("optimizer", c.model.optimizer);
    m.get("epochs", c.model.epochs);
    m.get("batch_size", c.model.batch_size);
    m.finish();

    auto r = root.child("search");
    r.get("trials", c.search.trials);
    r.get("instances", c.search.instances);
    r.get("lr_min", c.search.lr_min);
    r.get("lr_max", c.search.lr_max);
    r.get("wd_min", c.search.wd_min);
    r.get("wd_max", c.search.wd_max);
    r.finish();

    auto x = root.child("explain");
    x.get("steps", c.explain.steps);
    x.get("top_k", c.explain.top_k);
    x.get("max_slides", c.explain.max_slides);
    x.finish();

    auto e = root.child("eval");
    e.get("task", c.eval.task);
    e.finish();

    root.finish();
    validate(c);
    return c;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void save(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json(cfg);
    if (!out) throw IoError("write failed: " + path.string());
}

void validate(const RunConfig& c) {
    require(c.workers >= 1, "workers must be >= 1");
    require(c.tissue.downsample >= 1, "tissue.downsample must be >= 1");
    require(c.tissue.close_radius >= 0 && c.tissue.open_radius >= 0, "morphology radii must be >= 0");
    require(c.tissue.min_component_area >= 0, "tissue.min_component_area must be >= 0");
    require(c.segmentation.seg_mag > 0 && c.segmentation.ref_mag > 0, "magnifications must be positive");
    require(c.segmentation.target_side > 0, "segmentation.target_side must be positive");
    require(c.segmentation.compactness > 0, "segmentation.compactness must be positive");
    require(c.segmentation.iterations >= 1, "segmentation.iterations must be >= 1");
    require(c.segmentation.color_distance == "lab" || c.segmentation.color_distance == "rgb",
            "segmentation.color_distance must be lab or rgb");
    require(c.coarsen.tau >= -1.0 && c.coarsen.tau <= 1.0, "coarsen.tau must lie in [-1, 1]");
    require(c.coarsen.embeddings == "builtin" || c.coarsen.embeddings == "file",
            "coarsen.embeddings must be builtin or file");
    require(c.features.levels >= 2, "features.levels must be >= 2");
    require(c.features.xi > 0.0 && c.features.xi <= 1.0, "features.xi must lie in (0, 1]");
    require(c.model.hidden >= 1 && c.model.layers >= 1 && c.model.heads >= 1 && c.model.mlp_hidden >= 1,
            "model sizes must be >= 1");
    require(c.model.dropout >= 0.0 && c.model.dropout < 1.0, "model.dropout must lie in [0, 1)");
    require(c.model.readout == "mean" || c.model.readout == "sum" || c.model.readout == "max",
            "model.readout must be mean, sum or max");
    require(c.model.class_weighting == "none" || c.model.class_weighting == "balanced",
            "model.class_weighting must be none or balanced");
    require(c.model.optimizer == "adamw" || c.model.optimizer == "sgd", "model.optimizer must be adamw or sgd");
    require(c.model.epochs >= 1 && c.model.batch_size >= 1, "model.epochs and model.batch_size must be >= 1");
    require(c.search.trials >= 1 && c.search.instances >= 1, "search.trials and search.instances must be >= 1");
    require(c.search.lr_min > 0 && c.search.lr_min <= c.search.lr_max, "search lr range must be positive and ordered");
    require(c.search.wd_min > 0 && c.search.wd_min <= c.search.wd_max, "search wd range must be positive and ordered");
    require(c.explain.steps >= 1 && c.explain.top_k >= 1 && c.explain.max_slides >= 0, "explain settings out of range");
    require(c.eval.task == "stage" || c.eval.task == "survival", "eval.task must be stage or survival");
}

gnn::TrainConfig train_config(const RunConfig& cfg, double lr, double weight_decay, std::uint64_t seed) {
    gnn::TrainConfig t;
    t.lr = lr;
    t.weight_decay = weight_decay;
    t.seed = seed;
    t.epochs = cfg.model.epochs;
    t.batch_size = cfg.model.batch_size;
    t.hidden = cfg.model.hidden;
    t.layers = cfg.model.layers;
    t.heads = cfg.model.heads;
    t.mlp_hidden = cfg.model.mlp_hidden;
    t.dropout = cfg.model.dropout;
    t.readout = gnn::readout_from_string(cfg.model.readout);
    t.class_weighting = cfg.model.class_weighting == "balanced" ? gnn::ClassWeighting::Balanced : gnn::ClassWeighting::None;
    t.optimizer = cfg.model.optimizer == "sgd" ? gnn::Optimizer::Sgd : gnn::Optimizer::AdamW;
    return t;
}

} // namespace tissuegraph::config
