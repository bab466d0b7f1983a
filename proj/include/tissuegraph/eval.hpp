#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tissuegraph::eval {

// ----------------------------------------------------------------- metrics
// All metrics are percentages in [0, 100].

/// ROC AUC of `scores` for binary labels (1 = positive), midrank ties.
double binary_auc(std::span<const double> scores, std::span<const int> positive);

/// Macro one-vs-rest AUC over the classes present in `labels`. Classes
/// without both positives and negatives are skipped with a warning.
double auc_macro(const Eigen::MatrixXd& probabilities, std::span<const int> labels,
                 std::vector<std::string>* warnings = nullptr);

/// Mean of per-class F1 over all 4 classes (0 where precision + recall = 0).
double f1_macro(std::span<const int> predictions, std::span<const int> labels);

/// Mean recall over the classes present in `labels`.
double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels);

/// Harrell's concordance over comparable pairs (earlier time with an event).
/// Throws UndefinedMetric when no pair is comparable.
double c_index(std::span<const double> risks, std::span<const double> times, std::span<const int> events);

/// Row-wise argmax.
std::vector<int> argmax_rows(const Eigen::MatrixXd& probabilities);

/// Expected class index sum_c c * p_c per row, used as survival risk.
std::vector<double> expected_class(const Eigen::MatrixXd& probabilities);

/// Labels from quantile edges of the uncensored event times. A subject goes
/// to the number of edges its time exceeds.
std::vector<int> discretize_survival(std::span<const double> times, std::span<const int> events, int bins = 4);

/// Two-sided, pooled-variance two-sample Student t-test p-value.
double t_test(std::span<const double> a, std::span<const double> b);

/// Student t statistic used by t_test.
double t_statistic(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------- manifest

struct SlideRecord {
    std::string slide_id;
    std::string patient_id;
    std::filesystem::path image_path;
    std::filesystem::path nuclei_path;
    std::filesystem::path embedding_path;
    std::optional<int> stage;  // 0..3 for stages I..IV
    std::optional<double> time;
    std::optional<bool> event;
    std::string split;  // train, val or test
};

struct Manifest {
    std::vector<SlideRecord> slides;
};

inline constexpr const char* kManifestHeader =
    "slide_id,patient_id,image_path,nuclei_path,embedding_path,stage,time,event,split";

/// CSV with header kManifestHeader. Relative paths are resolved against the
/// manifest's directory. Stage is I, II, III or IV (or empty).
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

std::string stage_name(int stage);
int parse_stage(const std::string& text);

/// Shuffle patients with `seed` and give the first train_fraction of them
/// to "train", the next val_fraction to "val", the rest to "test".
void assign_patient_splits(Manifest& manifest, double train_fraction, double val_fraction, std::uint64_t seed);

/// Throws InvalidArgument when a patient appears in more than one split or
/// a split tag is unknown.
void validate_patient_splits(const Manifest& manifest);

// ----------------------------------------------------------- random search

struct SearchConfig {
    int trials = 25;
    int instances = 5;
    double lr_min = 1e-5;
    double lr_max = 1e-2;
    double wd_min = 1e-6;
    double wd_max = 1e-2;
    std::uint64_t seed = 0;
};

struct InstanceScore {
    int instance = 0;
    std::uint64_t seed = 0;
    double validation = 0;
    double test = 0;
};

struct TrialResult {
    int trial = 0;
    double lr = 0;
    double weight_decay = 0;
    std::vector<InstanceScore> instances;
    double mean_validation = 0;
    double mean_test = 0;
    double std_test = 0;  // sample standard deviation
};

struct SearchResult {
    std::vector<TrialResult> trials;
    int best = 0;  // highest mean validation score, earliest on ties

    const TrialResult& best_trial() const { return trials.at(static_cast<std::size_t>(best)); }
};

/// Trains and scores one model: returns (validation metric, test metric).
using InstanceRunner = std::function<std::pair<double, double>(double lr, double weight_decay, std::uint64_t seed)>;

/// Per-instance seed, independent of execution order.
std::uint64_t instance_seed(std::uint64_t seed, int trial, int instance);

/// Log-uniform (lr, wd) per trial from a generator seeded with `seed`.
std::vector<std::pair<double, double>> sample_hyperparameters(const SearchConfig& cfg);

SearchResult random_search(const SearchConfig& cfg, const InstanceRunner& run);

/// One JSON object per trial instance.
void write_search_jsonl(const std::filesystem::path& path, const SearchResult& result);

/// Aligned text table: one row per trial, best trial marked.
std::string format_search_summary(const SearchResult& result, const std::string& metric_name);

} // namespace tissuegraph::eval
