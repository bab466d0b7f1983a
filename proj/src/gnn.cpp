#include "tissuegraph/gnn.hpp"

#include "tissuegraph/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tissuegraph::gnn {

namespace {

constexpr double kLeakySlope = 0.2;

double elu(double x) { return x > 0 ? x : std::expm1(x); }
double elu_grad(double x) { return x > 0 ? 1.0 : std::exp(x); }

Eigen::MatrixXd elu(const Eigen::MatrixXd& m) { return m.unaryExpr([](double v) { return elu(v); }); }
Eigen::MatrixXd elu_grad(const Eigen::MatrixXd& m) { return m.unaryExpr([](double v) { return elu_grad(v); }); }

double round32(double v) { return static_cast<double>(static_cast<float>(v)); }

int layer_in_dim(const ModelConfig& c, int layer) { return layer == 0 ? c.input_dim : c.heads * c.hidden; }

void check_config(const ModelConfig& c) {
    if (c.input_dim < 1 || c.hidden < 1 || c.layers < 1 || c.heads < 1 || c.mlp_hidden < 1) {
        throw InvalidArgument("gat: dimensions, layers and heads must be positive");
    }
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw InvalidArgument("gat: dropout must lie in [0, 1)");
}

} // namespace

std::string to_string(Readout r) {
    switch (r) {
    case Readout::Mean: return "mean";
    case Readout::Sum: return "sum";
    case Readout::Max: return "max";
    }
    return "mean";
}

Readout readout_from_string(const std::string& s) {
    if (s == "mean") return Readout::Mean;
    if (s == "sum") return Readout::Sum;
    if (s == "max") return Readout::Max;
    throw InvalidArgument("unknown readout '" + s + "'");
}

// ---------------------------------------------------------------- batching

GraphBatch make_batch(std::span<const GraphInput* const> graphs) {
    if (graphs.empty()) throw InvalidArgument("make_batch: no graphs");
    const auto cols = graphs.front()->features.cols();
    Eigen::Index total = 0;
    for (const auto* g : graphs) {
        if (g->features.rows() == 0) throw InvalidArgument("make_batch: graph without nodes");
        if (g->features.cols() != cols) throw InvalidArgument("make_batch: feature dimension differs between graphs");
        total += g->features.rows();
    }
    GraphBatch b;
    b.features.resize(total, cols);
    b.graph_count = static_cast<int>(graphs.size());
    std::vector<std::pair<int, int>> directed;  // (dst, src)
    int offset = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const auto& g = *graphs[gi];
        const int n = static_cast<int>(g.features.rows());
        b.features.middleRows(offset, n) = g.features;
        for (int i = 0; i < n; ++i) {
            b.graph_of.push_back(static_cast<int>(gi));
            directed.emplace_back(offset + i, offset + i);
        }
        for (auto [u, v] : g.edges) {
            if (u < 0 || v < 0 || u >= n || v >= n) throw InvalidArgument("make_batch: edge endpoint out of range");
            if (u == v) continue;
            directed.emplace_back(offset + v, offset + u);
            directed.emplace_back(offset + u, offset + v);
        }
        offset += n;
    }
    std::sort(directed.begin(), directed.end());
    directed.erase(std::unique(directed.begin(), directed.end()), directed.end());
    for (auto [d, s] : directed) {
        b.dst.push_back(d);
        b.src.push_back(s);
    }
    return b;
}

GraphBatch make_batch(const GraphInput& graph) {
    const GraphInput* one[] = {&graph};
    return make_batch(one);
}

// ------------------------------------------------------------------ model

InputScaler InputScaler::identity(int dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

InputScaler InputScaler::fit(std::span<const GraphInput> graphs) {
    if (graphs.empty()) throw InvalidArgument("InputScaler::fit: no graphs");
    const auto dim = graphs.front().features.cols();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sq = Eigen::VectorXd::Zero(dim);
    double n = 0;
    for (const auto& g : graphs) {
        if (g.features.cols() != dim) throw InvalidArgument("InputScaler::fit: feature dimension differs");
        sum += g.features.colwise().sum().transpose();
        n += static_cast<double>(g.features.rows());
    }
    InputScaler s = identity(static_cast<int>(dim));
    if (n == 0) return s;
    s.mean = sum / n;
    for (const auto& g : graphs) {
        sq += (g.features.rowwise() - s.mean.transpose()).array().square().matrix().colwise().sum().transpose();
    }
    for (Eigen::Index j = 0; j < dim; ++j) {
        const double sd = std::sqrt(sq(j) / n);
        s.scale(j) = sd > 1e-12 ? sd : 1.0;
    }
    return s;
}

GatModel GatModel::zeros(const ModelConfig& config) {
    check_config(config);
    GatModel m;
    m.config = config;
    m.scaler = InputScaler::identity(config.input_dim);
    for (int l = 0; l < config.layers; ++l) {
        GatLayer layer;
        layer.concat = l + 1 < config.layers;
        for (int h = 0; h < config.heads; ++h) {
            layer.heads.push_back({Eigen::MatrixXd::Zero(layer_in_dim(config, l), config.hidden),
                                   Eigen::VectorXd::Zero(config.hidden), Eigen::VectorXd::Zero(config.hidden)});
        }
        m.layers.push_back(std::move(layer));
    }
    m.mlp_w1 = Eigen::MatrixXd::Zero(config.hidden, config.mlp_hidden);
    m.mlp_b1 = Eigen::VectorXd::Zero(config.mlp_hidden);
    m.mlp_w2 = Eigen::MatrixXd::Zero(config.mlp_hidden, kClassCount);
    m.mlp_b2 = Eigen::VectorXd::Zero(kClassCount);
    return m;
}

GatModel GatModel::init(const ModelConfig& config, rnd::Engine& rng) {
    GatModel m = zeros(config);
    auto glorot = [&rng](auto& t, double fan_in, double fan_out) {
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = round32(rnd::uniform(rng, -bound, bound));
        }
    };
    for (auto& layer : m.layers) {
        for (auto& head : layer.heads) {
            glorot(head.weight, static_cast<double>(head.weight.rows()), static_cast<double>(head.weight.cols()));
            glorot(head.att_dst, 2.0 * config.hidden, 1.0);
            glorot(head.att_src, 2.0 * config.hidden, 1.0);
        }
    }
    glorot(m.mlp_w1, config.hidden, config.mlp_hidden);
    glorot(m.mlp_w2, config.mlp_hidden, kClassCount);
    return m;
}

std::vector<std::pair<std::string, Eigen::Map<Eigen::VectorXd>>> GatModel::parameters() {
    std::vector<std::pair<std::string, Eigen::Map<Eigen::VectorXd>>> out;
    auto add = [&out](std::string name, auto& t) { out.emplace_back(std::move(name), Eigen::Map<Eigen::VectorXd>(t.data(), t.size())); };
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t h = 0; h < layers[l].heads.size(); ++h) {
            const std::string prefix = "layer" + std::to_string(l) + ".head" + std::to_string(h) + ".";
            add(prefix + "weight", layers[l].heads[h].weight);
            add(prefix + "att_dst", layers[l].heads[h].att_dst);
            add(prefix + "att_src", layers[l].heads[h].att_src);
        }
    }
    add("mlp.w1", mlp_w1);
    add("mlp.b1", mlp_b1);
    add("mlp.w2", mlp_w2);
    add("mlp.b2", mlp_b2);
    return out;
}

std::size_t GatModel::parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, p] : const_cast<GatModel*>(this)->parameters()) n += static_cast<std::size_t>(p.size());
    return n;
}

bool GatModel::operator==(const GatModel& other) const {
    auto a = const_cast<GatModel*>(this)->parameters();
    auto b = const_cast<GatModel&>(other).parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].second.size() != b[i].second.size() || a[i].second != b[i].second) return false;
    }
    return scaler.mean == other.scaler.mean && scaler.scale == other.scaler.scale;
}

// ---------------------------------------------------------------- forward

namespace {

Eigen::MatrixXd draw_mask(Eigen::Index rows, Eigen::Index cols, double p, rnd::Engine& rng) {
    Eigen::MatrixXd m(rows, cols);
    const double keep = 1.0 / (1.0 - p);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rnd::uniform01(rng) < p ? 0.0 : keep;
    }
    return m;
}

ForwardCache run_forward(const GatModel& model, const GraphBatch& batch, const DropoutMasks* replay,
                         rnd::Engine* rng) {
    const auto& cfg = model.config;
    if (batch.features.cols() != cfg.input_dim) {
        throw InvalidArgument("gat_forward: feature dimension " + std::to_string(batch.features.cols()) +
                              " does not match model input " + std::to_string(cfg.input_dim));
    }
    const int n = batch.node_count();
    const std::size_t edges = batch.src.size();
    ForwardCache cache;
    cache.dropout_applied = (replay && !replay->inputs.empty()) || (rng && cfg.dropout > 0);
    if (replay && cache.dropout_applied) cache.masks = *replay;

    cache.scaled_input = (batch.features.rowwise() - model.scaler.mean.transpose()).array().rowwise() /
                         model.scaler.scale.transpose().array();
    Eigen::MatrixXd h = cache.scaled_input;

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        LayerCache lc;
        if (cache.dropout_applied) {
            if (!replay) {
                cache.masks.inputs.push_back(draw_mask(h.rows(), h.cols(), cfg.dropout, *rng));
                cache.masks.attention.emplace_back();
                for (std::size_t k = 0; k < layer.heads.size(); ++k) {
                    cache.masks.attention.back().push_back(
                        draw_mask(static_cast<Eigen::Index>(edges), 1, cfg.dropout, *rng).col(0));
                }
            }
            const auto& mask = cache.masks.inputs.at(l);
            if (mask.rows() != h.rows() || mask.cols() != h.cols()) throw InvalidArgument("gat_forward: mask shape");
            lc.input = h.cwiseProduct(mask);
        } else {
            lc.input = h;
        }

        for (std::size_t k = 0; k < layer.heads.size(); ++k) {
            const auto& head = layer.heads[k];
            HeadCache hc;
            hc.projected = lc.input * head.weight;
            const Eigen::VectorXd score_dst = hc.projected * head.att_dst;
            const Eigen::VectorXd score_src = hc.projected * head.att_src;
            hc.raw_score.resize(static_cast<Eigen::Index>(edges));
            hc.alpha.resize(static_cast<Eigen::Index>(edges));
            for (std::size_t e = 0; e < edges; ++e) hc.raw_score(e) = score_dst(batch.dst[e]) + score_src(batch.src[e]);

            // Softmax over each receiving node's contiguous edge block.
            for (std::size_t begin = 0; begin < edges;) {
                std::size_t end = begin;
                double top = -std::numeric_limits<double>::infinity();
                while (end < edges && batch.dst[end] == batch.dst[begin]) {
                    const double r = hc.raw_score(end);
                    top = std::max(top, r > 0 ? r : kLeakySlope * r);
                    ++end;
                }
                double z = 0;
                for (std::size_t e = begin; e < end; ++e) {
                    const double r = hc.raw_score(e);
                    hc.alpha(e) = std::exp((r > 0 ? r : kLeakySlope * r) - top);
                    z += hc.alpha(e);
                }
                for (std::size_t e = begin; e < end; ++e) hc.alpha(e) /= z;
                begin = end;
            }

            hc.aggregate = Eigen::MatrixXd::Zero(n, head.weight.cols());
            const Eigen::VectorXd* att_mask = cache.dropout_applied ? &cache.masks.attention.at(l).at(k) : nullptr;
            for (std::size_t e = 0; e < edges; ++e) {
                const double beta = att_mask ? hc.alpha(e) * (*att_mask)(e) : hc.alpha(e);
                hc.aggregate.row(batch.dst[e]) += beta * hc.projected.row(batch.src[e]);
            }
            lc.heads.push_back(std::move(hc));
        }

        const int out = cfg.hidden;
        if (layer.concat) {
            lc.output.resize(n, out * static_cast<int>(layer.heads.size()));
            for (std::size_t k = 0; k < lc.heads.size(); ++k) {
                lc.output.middleCols(static_cast<Eigen::Index>(k) * out, out) = elu(lc.heads[k].aggregate);
            }
        } else {
            lc.pre_activation = Eigen::MatrixXd::Zero(n, out);
            for (const auto& hc : lc.heads) lc.pre_activation += hc.aggregate;
            lc.pre_activation /= static_cast<double>(lc.heads.size());
            lc.output = elu(lc.pre_activation);
        }
        h = lc.output;
        cache.layers.push_back(std::move(lc));
    }

    // Readout.
    const int graphs = batch.graph_count;
    cache.pooled = Eigen::MatrixXd::Zero(graphs, h.cols());
    if (cfg.readout == Readout::Max) {
        cache.pool_argmax.assign(graphs, std::vector<int>(h.cols(), -1));
        for (int i = 0; i < n; ++i) {
            const int g = batch.graph_of[i];
            for (Eigen::Index c = 0; c < h.cols(); ++c) {
                int& best = cache.pool_argmax[g][c];
                if (best < 0 || h(i, c) > h(best, c)) best = i;
            }
        }
        for (int g = 0; g < graphs; ++g) {
            for (Eigen::Index c = 0; c < h.cols(); ++c) cache.pooled(g, c) = h(cache.pool_argmax[g][c], c);
        }
    } else {
        std::vector<double> counts(graphs, 0.0);
        for (int i = 0; i < n; ++i) {
            cache.pooled.row(batch.graph_of[i]) += h.row(i);
            counts[batch.graph_of[i]] += 1;
        }
        if (cfg.readout == Readout::Mean) {
            for (int g = 0; g < graphs; ++g) cache.pooled.row(g) /= counts[g];
        }
    }

    cache.mlp_pre = (cache.pooled * model.mlp_w1).rowwise() + model.mlp_b1.transpose();
    cache.mlp_hidden = elu(cache.mlp_pre);
    cache.logits = (cache.mlp_hidden * model.mlp_w2).rowwise() + model.mlp_b2.transpose();
    return cache;
}

} // namespace

ForwardCache forward(const GatModel& model, const GraphBatch& batch) {
    return run_forward(model, batch, nullptr, nullptr);
}

ForwardCache forward_train(const GatModel& model, const GraphBatch& batch, rnd::Engine& rng) {
    return run_forward(model, batch, nullptr, &rng);
}

ForwardCache forward_with_masks(const GatModel& model, const GraphBatch& batch, const DropoutMasks& masks) {
    return run_forward(model, batch, &masks, nullptr);
}

// --------------------------------------------------------------- backward

Gradients backward(const GatModel& model, const GraphBatch& batch, const ForwardCache& cache,
                   const Eigen::MatrixXd& dlogits) {
    const auto& cfg = model.config;
    if (dlogits.rows() != cache.logits.rows() || dlogits.cols() != kClassCount) {
        throw InvalidArgument("backward: logit gradient shape mismatch");
    }
    Gradients grads{GatModel::zeros(cfg), {}};
    GatModel& g = grads.params;
    const int n = batch.node_count();
    const std::size_t edges = batch.src.size();

    g.mlp_w2 = cache.mlp_hidden.transpose() * dlogits;
    g.mlp_b2 = dlogits.colwise().sum().transpose();
    const Eigen::MatrixXd dpre = (dlogits * model.mlp_w2.transpose()).cwiseProduct(elu_grad(cache.mlp_pre));
    g.mlp_w1 = cache.pooled.transpose() * dpre;
    g.mlp_b1 = dpre.colwise().sum().transpose();
    const Eigen::MatrixXd dpooled = dpre * model.mlp_w1.transpose();

    Eigen::MatrixXd dh = Eigen::MatrixXd::Zero(n, dpooled.cols());
    if (cfg.readout == Readout::Max) {
        for (int gi = 0; gi < batch.graph_count; ++gi) {
            for (Eigen::Index c = 0; c < dpooled.cols(); ++c) dh(cache.pool_argmax[gi][c], c) += dpooled(gi, c);
        }
    } else {
        std::vector<double> counts(batch.graph_count, 0.0);
        for (int i = 0; i < n; ++i) counts[batch.graph_of[i]] += 1;
        for (int i = 0; i < n; ++i) {
            const int gi = batch.graph_of[i];
            dh.row(i) = cfg.readout == Readout::Mean ? Eigen::RowVectorXd(dpooled.row(gi) / counts[gi])
                                                     : Eigen::RowVectorXd(dpooled.row(gi));
        }
    }

    for (int l = static_cast<int>(model.layers.size()) - 1; l >= 0; --l) {
        const auto& layer = model.layers[l];
        const auto& lc = cache.layers[l];
        const int out = cfg.hidden;
        const double heads = static_cast<double>(layer.heads.size());
        Eigen::MatrixXd dpre_mean;
        if (!layer.concat) dpre_mean = dh.cwiseProduct(elu_grad(lc.pre_activation)) / heads;

        Eigen::MatrixXd din = Eigen::MatrixXd::Zero(n, lc.input.cols());
        for (std::size_t k = 0; k < layer.heads.size(); ++k) {
            const auto& head = layer.heads[k];
            const auto& hc = lc.heads[k];
            auto& gh = g.layers[l].heads[k];
            const Eigen::MatrixXd dagg =
                layer.concat ? Eigen::MatrixXd(dh.middleCols(static_cast<Eigen::Index>(k) * out, out)
                                                   .cwiseProduct(elu_grad(hc.aggregate)))
                             : dpre_mean;
            const Eigen::VectorXd* att_mask = cache.dropout_applied ? &cache.masks.attention.at(l).at(k) : nullptr;

            Eigen::MatrixXd dproj = Eigen::MatrixXd::Zero(n, out);
            Eigen::VectorXd dalpha(static_cast<Eigen::Index>(edges));
            for (std::size_t e = 0; e < edges; ++e) {
                const double mask = att_mask ? (*att_mask)(e) : 1.0;
                const double dbeta = dagg.row(batch.dst[e]).dot(hc.projected.row(batch.src[e]));
                dproj.row(batch.src[e]) += hc.alpha(e) * mask * dagg.row(batch.dst[e]);
                dalpha(e) = dbeta * mask;
            }
            Eigen::VectorXd dscore_dst = Eigen::VectorXd::Zero(n), dscore_src = Eigen::VectorXd::Zero(n);
            for (std::size_t begin = 0; begin < edges;) {
                std::size_t end = begin;
                double dot = 0;
                while (end < edges && batch.dst[end] == batch.dst[begin]) {
                    dot += hc.alpha(end) * dalpha(end);
                    ++end;
                }
                for (std::size_t e = begin; e < end; ++e) {
                    const double dleaky = hc.alpha(e) * (dalpha(e) - dot);
                    const double draw = hc.raw_score(e) > 0 ? dleaky : kLeakySlope * dleaky;
                    dscore_dst(batch.dst[e]) += draw;
                    dscore_src(batch.src[e]) += draw;
                }
                begin = end;
            }
            gh.att_dst = hc.projected.transpose() * dscore_dst;
            gh.att_src = hc.projected.transpose() * dscore_src;
            dproj += dscore_dst * head.att_dst.transpose() + dscore_src * head.att_src.transpose();
            gh.weight = lc.input.transpose() * dproj;
            din += dproj * head.weight.transpose();
        }
        if (cache.dropout_applied) din = din.cwiseProduct(cache.masks.inputs.at(l));
        dh = std::move(din);
    }
    grads.inputs = dh.array().rowwise() / model.scaler.scale.transpose().array();
    return grads;
}

// ------------------------------------------------------------------- loss

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    const double top = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - top).exp();
    return e / e.sum();
}

std::pair<double, Eigen::MatrixXd> loss_with_grad(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                                  std::span<const double> class_weights) {
    if (logits.cols() != kClassCount) throw InvalidArgument("loss: expected 4 logits per graph");
    if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw InvalidArgument("loss: label count mismatch");
    if (!class_weights.empty() && class_weights.size() != static_cast<std::size_t>(kClassCount)) {
        throw InvalidArgument("loss: expected 4 class weights");
    }
    const double batch = static_cast<double>(labels.size());
    double total = 0;
    Eigen::MatrixXd dlogits(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < logits.rows(); ++b) {
        const int y = labels[b];
        if (y < 0 || y >= kClassCount) throw InvalidArgument("loss: label " + std::to_string(y) + " out of range");
        const double w = class_weights.empty() ? 1.0 : class_weights[y];
        const Eigen::VectorXd row = logits.row(b).transpose();
        const double top = row.maxCoeff();
        const double lse = top + std::log((row.array() - top).exp().sum());
        total += w * (lse - row(y));
        Eigen::VectorXd p = softmax(row);
        p(y) -= 1.0;
        dlogits.row(b) = (w / batch) * p.transpose();
    }
    return {total / batch, dlogits};
}

double loss(const Eigen::MatrixXd& logits, std::span<const int> labels, std::span<const double> class_weights) {
    return loss_with_grad(logits, labels, class_weights).first;
}

std::array<double, kClassCount> predict(const GatModel& model, const GraphInput& graph) {
    const auto cache = forward(model, make_batch(graph));
    const Eigen::VectorXd p = softmax(cache.logits.row(0).transpose());
    return {p(0), p(1), p(2), p(3)};
}

} // namespace tissuegraph::gnn
