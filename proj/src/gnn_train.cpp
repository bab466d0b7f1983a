#include "tissuegraph/gnn.hpp"

#include "binio.hpp"
#include "tissuegraph/error.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <numeric>

namespace tissuegraph::gnn {

namespace {

void check_train_config(const TrainConfig& cfg) {
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw InvalidArgument("train: learning rate must be >= 0");
    if (!(cfg.weight_decay >= 0.0)) throw InvalidArgument("train: weight decay must be >= 0");
    if (cfg.epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw InvalidArgument("train: batch size must be >= 1");
}

int argmax(const Eigen::RowVectorXd& row) {
    Eigen::Index best = 0;
    row.maxCoeff(&best);
    return static_cast<int>(best);
}

struct Evaluation {
    double loss = 0;
    double accuracy = 0;
};

Evaluation evaluate(const GatModel& model, std::span<const LabeledGraph> data, std::span<const double> weights) {
    std::vector<const GraphInput*> graphs;
    std::vector<int> labels;
    for (const auto& d : data) {
        graphs.push_back(&d.graph);
        labels.push_back(d.label);
    }
    const auto cache = forward(model, make_batch(graphs));
    Evaluation ev;
    ev.loss = loss(cache.logits, labels, weights);
    int correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += argmax(cache.logits.row(static_cast<Eigen::Index>(i))) == labels[i];
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    return ev;
}

} // namespace

std::vector<double> class_weights(std::span<const LabeledGraph> data, ClassWeighting mode) {
    std::vector<double> w(kClassCount, 1.0);
    if (mode == ClassWeighting::None || data.empty()) return w;
    std::vector<double> counts(kClassCount, 0.0);
    for (const auto& d : data) {
        if (d.label < 0 || d.label >= kClassCount) throw InvalidArgument("class_weights: label out of range");
        counts[d.label] += 1;
    }
    int present = 0;
    for (double c : counts) present += c > 0;
    for (int c = 0; c < kClassCount; ++c) {
        if (counts[c] > 0) w[c] = static_cast<double>(data.size()) / (present * counts[c]);
    }
    return w;
}

TrainResult train(std::span<const LabeledGraph> train_set, std::span<const LabeledGraph> val_set,
                  const TrainConfig& cfg) {
    if (train_set.empty()) throw InvalidArgument("train: empty training set");
    check_train_config(cfg);

    ModelConfig mc;
    mc.input_dim = static_cast<int>(train_set.front().graph.features.cols());
    mc.hidden = cfg.hidden;
    mc.layers = cfg.layers;
    mc.heads = cfg.heads;
    mc.mlp_hidden = cfg.mlp_hidden;
    mc.dropout = cfg.dropout;
    mc.readout = cfg.readout;

    rnd::Engine rng(cfg.seed);
    TrainResult result{GatModel::init(mc, rng), {}};
    GatModel& model = result.model;

    std::vector<GraphInput> inputs;
    for (const auto& d : train_set) inputs.push_back(d.graph);
    model.scaler = InputScaler::fit(inputs);
    for (auto* v : {&model.scaler.mean, &model.scaler.scale}) {
        *v = v->unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
    }

    const auto weights = class_weights(train_set, cfg.class_weighting);
    auto params = model.parameters();
    std::vector<Eigen::VectorXd> m1, m2;
    for (auto& [name, p] : params) {
        m1.push_back(Eigen::VectorXd::Zero(p.size()));
        m2.push_back(Eigen::VectorXd::Zero(p.size()));
    }
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    long step = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rnd::shuffle(order, rng);
        double loss_sum = 0;
        int correct = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const GraphInput*> graphs;
            std::vector<int> labels;
            for (std::size_t i = start; i < stop; ++i) {
                graphs.push_back(&train_set[order[i]].graph);
                labels.push_back(train_set[order[i]].label);
            }
            const GraphBatch batch = make_batch(graphs);
            const ForwardCache cache = forward_train(model, batch, rng);
            auto [batch_loss, dlogits] = loss_with_grad(cache.logits, labels, weights);
            if (!std::isfinite(batch_loss)) {
                throw Divergence("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                 std::to_string(start) + " (lr " + std::to_string(cfg.lr) + ")");
            }
            loss_sum += batch_loss * static_cast<double>(labels.size());
            for (std::size_t i = 0; i < labels.size(); ++i) {
                correct += argmax(cache.logits.row(static_cast<Eigen::Index>(i))) == labels[i];
            }

            Gradients grads = backward(model, batch, cache, dlogits);
            auto gparams = grads.params.parameters();
            ++step;
            const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            for (std::size_t t = 0; t < params.size(); ++t) {
                auto& p = params[t].second;
                const auto& g = gparams[t].second;
                if (!g.allFinite()) {
                    throw Divergence("train: non-finite gradient for " + params[t].first + " at epoch " +
                                     std::to_string(epoch));
                }
                p -= cfg.lr * cfg.weight_decay * p;
                if (cfg.optimizer == Optimizer::Sgd) {
                    p -= cfg.lr * g;
                    continue;
                }
                m1[t] = kBeta1 * m1[t] + (1 - kBeta1) * g;
                m2[t] = kBeta2 * m2[t] + (1 - kBeta2) * g.cwiseProduct(g);
                p.array() -= cfg.lr * (m1[t].array() / bc1) / ((m2[t].array() / bc2).sqrt() + kEps);
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
        rec.val_loss = rec.val_accuracy = std::numeric_limits<double>::quiet_NaN();
        if (!val_set.empty()) {
            const auto ev = evaluate(model, val_set, weights);
            rec.val_loss = ev.loss;
            rec.val_accuracy = ev.accuracy;
        }
        result.history.push_back(rec);
    }

    for (auto& [name, p] : params) {
        p = p.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
    }
    return result;
}

// -------------------------------------------------------------- checkpoint

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRef {
    std::string name;
    double* data;
    Eigen::Index rows;
    Eigen::Index cols;
};

template <class M>
void push(std::vector<TensorRef>& out, std::string name, M& t) {
    out.push_back({std::move(name), t.data(), t.rows(), t.cols()});
}

std::vector<TensorRef> tensors(GatModel& m) {
    std::vector<TensorRef> out;
    push(out, "scaler.mean", m.scaler.mean);
    push(out, "scaler.scale", m.scaler.scale);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        for (std::size_t h = 0; h < m.layers[l].heads.size(); ++h) {
            const std::string prefix = "layer" + std::to_string(l) + ".head" + std::to_string(h) + ".";
            push(out, prefix + "weight", m.layers[l].heads[h].weight);
            push(out, prefix + "att_dst", m.layers[l].heads[h].att_dst);
            push(out, prefix + "att_src", m.layers[l].heads[h].att_src);
        }
    }
    push(out, "mlp.w1", m.mlp_w1);
    push(out, "mlp.b1", m.mlp_b1);
    push(out, "mlp.w2", m.mlp_w2);
    push(out, "mlp.b2", m.mlp_b2);
    return out;
}

// Eigen storage is column-major; tensors are written row-major.
double& element(const TensorRef& t, Eigen::Index r, Eigen::Index c) { return t.data[c * t.rows + r]; }

} // namespace

void save_checkpoint(const std::filesystem::path& path, const GatModel& model) {
    GatModel copy = model;
    const auto refs = tensors(copy);
    nlohmann::ordered_json manifest;
    manifest["format"] = "tissuegraph-gat";
    const auto& c = model.config;
    manifest["config"] = {{"input_dim", c.input_dim}, {"hidden", c.hidden},         {"layers", c.layers},
                          {"heads", c.heads},         {"mlp_hidden", c.mlp_hidden}, {"dropout", c.dropout},
                          {"readout", to_string(c.readout)}, {"classes", kClassCount}};
    manifest["tensors"] = nlohmann::ordered_json::array();
    for (const auto& t : refs) manifest["tensors"].push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}});

    binio::Writer w;
    w.magic("TGCK");
    w.u32(kCheckpointVersion);
    w.str(manifest.dump());
    for (const auto& t : refs) {
        for (Eigen::Index r = 0; r < t.rows; ++r) {
            for (Eigen::Index col = 0; col < t.cols; ++col) w.f32(static_cast<float>(element(t, r, col)));
        }
    }
    w.save(path);
}

GatModel load_checkpoint(const std::filesystem::path& path) {
    auto r = binio::Reader::load(path);
    r.expect_magic("TGCK");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw IoError(path.string() + ": unsupported checkpoint version");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(r.str());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad manifest: " + e.what());
    }
    ModelConfig c;
    try {
        const auto& mc = manifest.at("config");
        c.input_dim = mc.at("input_dim");
        c.hidden = mc.at("hidden");
        c.layers = mc.at("layers");
        c.heads = mc.at("heads");
        c.mlp_hidden = mc.at("mlp_hidden");
        c.dropout = mc.at("dropout");
        c.readout = readout_from_string(mc.at("readout"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad manifest: " + e.what());
    }
    GatModel model = GatModel::zeros(c);
    const auto refs = tensors(model);
    const auto& listed = manifest.at("tensors");
    if (listed.size() != refs.size()) throw IoError(path.string() + ": tensor count mismatch");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto& t = refs[i];
        if (listed[i].at("name") != t.name || listed[i].at("shape")[0] != t.rows || listed[i].at("shape")[1] != t.cols) {
            throw IoError(path.string() + ": unexpected tensor " + listed[i].dump());
        }
        for (Eigen::Index row = 0; row < t.rows; ++row) {
            for (Eigen::Index col = 0; col < t.cols; ++col) element(t, row, col) = r.f32();
        }
    }
    if (!r.at_end()) throw IoError(path.string() + ": trailing bytes");
    return model;
}

} // namespace tissuegraph::gnn
