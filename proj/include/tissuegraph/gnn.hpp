#pragma once

#include "tissuegraph/random.hpp"

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tissuegraph::gnn {

inline constexpr int kClassCount = 4;

/// One graph as fed to the classifier: node features and undirected edges.
struct GraphInput {
    Eigen::MatrixXd features;
    std::vector<std::pair<int, int>> edges;
};

/// Disjoint union of graphs with directed edges (both directions of every
/// undirected edge plus one self-loop per node), sorted by (dst, src).
struct GraphBatch {
    Eigen::MatrixXd features;
    std::vector<int> src;
    std::vector<int> dst;
    std::vector<int> graph_of;
    int graph_count = 0;

    int node_count() const { return static_cast<int>(features.rows()); }
};

GraphBatch make_batch(std::span<const GraphInput* const> graphs);
GraphBatch make_batch(const GraphInput& graph);

enum class Readout { Mean, Sum, Max };

std::string to_string(Readout r);
Readout readout_from_string(const std::string& s);

struct ModelConfig {
    int input_dim = 0;
    int hidden = 64;
    int layers = 3;
    int heads = 4;
    int mlp_hidden = 64;
    double dropout = 0.2;
    Readout readout = Readout::Mean;
};

/// Per-feature standardisation fitted on training nodes.
struct InputScaler {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static InputScaler identity(int dim);
    static InputScaler fit(std::span<const GraphInput> graphs);
};

struct GatHead {
    Eigen::MatrixXd weight;   // in x out
    Eigen::VectorXd att_dst;  // scores the receiving node
    Eigen::VectorXd att_src;  // scores the sending node
};

struct GatLayer {
    std::vector<GatHead> heads;
    /// Concatenate head outputs (hidden layers) or average them (last layer).
    bool concat = true;
};

struct GatModel {
    ModelConfig config;
    InputScaler scaler;
    std::vector<GatLayer> layers;
    Eigen::MatrixXd mlp_w1;  // hidden x mlp_hidden
    Eigen::VectorXd mlp_b1;
    Eigen::MatrixXd mlp_w2;  // mlp_hidden x classes
    Eigen::VectorXd mlp_b2;

    /// Zero-valued model with the shapes implied by `config`.
    static GatModel zeros(const ModelConfig& config);
    /// Glorot-uniform weights, zero biases, values rounded to float32.
    static GatModel init(const ModelConfig& config, rnd::Engine& rng);

    /// Trainable tensors in checkpoint order (scaler excluded).
    std::vector<std::pair<std::string, Eigen::Map<Eigen::VectorXd>>> parameters();
    std::size_t parameter_count() const;
    bool operator==(const GatModel& other) const;
};

/// Multiplicative dropout masks (0 or 1/(1-p)) per layer.
struct DropoutMasks {
    std::vector<Eigen::MatrixXd> inputs;                 // per layer, nodes x in
    std::vector<std::vector<Eigen::VectorXd>> attention;  // per layer, per head, edges
};

struct HeadCache {
    Eigen::MatrixXd projected;  // nodes x out
    Eigen::VectorXd raw_score;  // per edge, before LeakyReLU
    Eigen::VectorXd alpha;      // per edge, softmax
    Eigen::MatrixXd aggregate;  // nodes x out, before activation
};

struct LayerCache {
    Eigen::MatrixXd input;  // after dropout
    std::vector<HeadCache> heads;
    Eigen::MatrixXd pre_activation;  // averaging layers only
    Eigen::MatrixXd output;
};

struct ForwardCache {
    Eigen::MatrixXd scaled_input;
    std::vector<LayerCache> layers;
    DropoutMasks masks;
    bool dropout_applied = false;
    Eigen::MatrixXd pooled;                     // graphs x hidden
    std::vector<std::vector<int>> pool_argmax;  // max readout only
    Eigen::MatrixXd mlp_pre;                    // graphs x mlp_hidden
    Eigen::MatrixXd mlp_hidden;
    Eigen::MatrixXd logits;                     // graphs x classes
};

/// Inference pass, no dropout.
ForwardCache forward(const GatModel& model, const GraphBatch& batch);
/// Training pass with fresh dropout masks drawn from `rng`.
ForwardCache forward_train(const GatModel& model, const GraphBatch& batch, rnd::Engine& rng);
/// Training pass replaying recorded masks.
ForwardCache forward_with_masks(const GatModel& model, const GraphBatch& batch, const DropoutMasks& masks);

struct Gradients {
    GatModel params;          // same shapes as the model
    Eigen::MatrixXd inputs;   // d/d raw node features
};

/// Reverse pass given d(objective)/d(logits).
Gradients backward(const GatModel& model, const GraphBatch& batch, const ForwardCache& cache,
                   const Eigen::MatrixXd& dlogits);

/// Class-weighted cross-entropy, (1/B) sum_b w[y_b] * CE_b.
double loss(const Eigen::MatrixXd& logits, std::span<const int> labels, std::span<const double> class_weights = {});

/// Loss and its gradient w.r.t. the logits.
std::pair<double, Eigen::MatrixXd> loss_with_grad(const Eigen::MatrixXd& logits, std::span<const int> labels,
                                                  std::span<const double> class_weights = {});

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

/// Class probabilities for one graph.
std::array<double, kClassCount> predict(const GatModel& model, const GraphInput& graph);

enum class Optimizer { AdamW, Sgd };
enum class ClassWeighting { None, Balanced };

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 100;
    int batch_size = 8;
    std::uint64_t seed = 0;
    int hidden = 64;
    int layers = 3;
    int heads = 4;
    int mlp_hidden = 64;
    double dropout = 0.2;
    Readout readout = Readout::Mean;
    ClassWeighting class_weighting = ClassWeighting::None;
    Optimizer optimizer = Optimizer::AdamW;
};

struct LabeledGraph {
    GraphInput graph;
    int label = 0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double train_accuracy = 0;
    double val_loss = 0;      // NaN without a validation set
    double val_accuracy = 0;  // NaN without a validation set
};

struct TrainResult {
    GatModel model;
    std::vector<EpochRecord> history;
};

std::vector<double> class_weights(std::span<const LabeledGraph> data, ClassWeighting mode);

/// AdamW (beta 0.9/0.999, eps 1e-8, decoupled decay) or SGD. Deterministic
/// for a fixed seed. Final parameters are rounded to float32 so the model
/// survives a checkpoint round trip unchanged. Throws Divergence on a
/// non-finite loss.
TrainResult train(std::span<const LabeledGraph> train_set, std::span<const LabeledGraph> val_set,
                  const TrainConfig& cfg);

/// Binary "TGCK": u32 version, u32-length JSON manifest (config and tensor
/// shapes), then little-endian float32 tensors in manifest order.
void save_checkpoint(const std::filesystem::path& path, const GatModel& model);
GatModel load_checkpoint(const std::filesystem::path& path);

} // namespace tissuegraph::gnn
