#pragma once

#include "tissuegraph/raster.hpp"
#include "tissuegraph/superpixel.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tissuegraph::features {

enum class Group { Texture, Morph, Nuclear };

struct FeatureDef {
    std::string name;
    Group group = Group::Texture;
    std::string family;
};

inline constexpr int kTextureCount = 93;
inline constexpr int kMorphCount = 18;
inline constexpr int kNuclearCount = 77;
inline constexpr int kFullCount = kTextureCount + kMorphCount + kNuclearCount;
inline constexpr int kLbpCount = 10;

std::vector<std::string> texture_feature_names();
std::vector<std::string> morph_feature_names();
std::vector<std::string> nuclear_feature_names();
std::vector<std::string> lbp_feature_names();

/// Ordered feature universe (texture, morph, nuclear, then the optional LBP
/// block) with an active flag per entry.
class FeatureCatalog {
public:
    static FeatureCatalog full(bool include_lbp = false);

    std::size_t size() const { return entries_.size(); }
    const std::vector<FeatureDef>& entries() const { return entries_; }
    const std::vector<bool>& active() const { return active_; }
    void set_active(std::vector<bool> flags);

    std::size_t active_count() const;
    std::vector<int> active_indices() const;
    std::vector<std::string> active_names() const;
    std::vector<std::string> names() const;
    /// Catalog position of `name`, or -1.
    int index_of(const std::string& name) const;

private:
    std::vector<FeatureDef> entries_;
    std::vector<bool> active_;
};

/// Raw gray values of one region over its bounding box. Pixels outside the
/// region have inside = 0 and are ignored.
struct GrayRegion {
    int width = 0;
    int height = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> inside;

    std::size_t pixel_count() const;
};

/// 93 texture and intensity features in catalog order. First-order
/// statistics use the raw values; matrix families use the region quantised
/// to `levels` gray levels, with level q entering the formulas as q + 1.
std::vector<double> extract_texture(const GrayRegion& region, int levels = 32);

/// Uniform LBP (8 square neighbours, radius 1) histogram over pixels whose
/// neighbours all lie in the region; normalised, zeros if none qualify.
std::vector<double> extract_lbp(const GrayRegion& region);

struct MorphParams {
    double bright_cutoff = 200.0;
    double dark_cutoff = 50.0;
};

/// 18 colour/morphology statistics over the given pixel indices of `img`.
std::vector<double> extract_morph(const raster::RgbImage& img, std::span<const std::size_t> pixels,
                                  const MorphParams& params = {});

enum class NucleusType : int { NoLabel = 0, Neoplastic = 1, Inflammatory = 2, Connective = 3, Dead = 4, NonNeoplastic = 5 };

struct NucleiMap {
    int width = 0;
    int height = 0;
    /// Instance id per pixel, 0 = no nucleus.
    std::vector<std::uint32_t> instance;
    /// Type code (0-5) per instance id.
    std::map<std::uint32_t, int> types;
};

/// Per-instance pixel areas.
std::map<std::uint32_t, std::int64_t> nucleus_areas(const NucleiMap& nuclei);

/// 77 nuclear statistics for the region given by `pixels`. A nucleus counts
/// when more than half of its pixels fall inside the region.
std::vector<double> extract_nuclear(std::span<const std::size_t> pixels, const NucleiMap& nuclei);

/// Same, for every label of `labels` at once. Row r belongs to label r.
std::vector<std::vector<double>> extract_nuclear_all(const superpixel::LabelMap& labels, const NucleiMap& nuclei);

/// 16-bit instance PNG plus CSV sidecar with header `instance_id,type`.
NucleiMap read_nuclei(const std::filesystem::path& png, const std::filesystem::path& csv);
void write_nuclei(const NucleiMap& nuclei, const std::filesystem::path& png, const std::filesystem::path& csv);

struct ExtractParams {
    int levels = 32;
    MorphParams morph;
    bool include_lbp = false;
};

/// Full-catalog features for each label listed in `node_ids`, one row per
/// node. `nuclei` may be null, in which case the nuclear block is zero.
Eigen::MatrixXd extract_node_features(const raster::RgbImage& img, const superpixel::LabelMap& labels,
                                      const NucleiMap* nuclei, std::span<const int> node_ids,
                                      const ExtractParams& params = {});

/// Greedy correlation filter over catalog order. A feature j is dropped
/// when an earlier, still active feature i has |pearson(i, j)| > xi.
/// Constant columns correlate 0 with everything. Requires >= 2 rows and
/// xi in (0, 1].
std::vector<bool> prune_correlated(const Eigen::MatrixXd& samples, double xi);

/// Same, only considering columns whose flag in `initially_active` is set.
std::vector<bool> prune_correlated(const Eigen::MatrixXd& samples, double xi, const std::vector<bool>& initially_active);

/// Pearson correlation clamped to [-1, 1]; 0 if either column is constant.
double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

/// Node feature matrix with column names and node ids.
struct FeatureMatrix {
    std::vector<std::string> names;
    std::vector<int> node_ids;
    Eigen::MatrixXd values;
};

/// Binary layout: "TGFM" u32 version u32 rows u32 cols, u32-length-prefixed
/// newline-joined names, rows x u32 node id, rows x cols f64 row-major.
void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_feature_matrix(const std::filesystem::path& path);

/// Columns of `m` selected by name, in the order given.
FeatureMatrix select_columns(const FeatureMatrix& m, const std::vector<std::string>& names);

/// Linear-interpolated percentile (q in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double q);

} // namespace tissuegraph::features
