#pragma once

#include "tissuegraph/coarsen.hpp"
#include "tissuegraph/graph.hpp"
#include "tissuegraph/superpixel.hpp"
#include "tissuegraph/tissue.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace tissuegraph::artifacts {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

/// Label map as a 16-bit gray PNG; background is stored as 65535.
inline constexpr std::uint16_t kBackgroundSample = 65535;
void write_label_png(const std::filesystem::path& path, const superpixel::LabelMap& labels);
superpixel::LabelMap read_label_png(const std::filesystem::path& path);

/// Mask as an 8-bit PNG with 0 / 255 samples.
void write_mask_png(const std::filesystem::path& path, const tissue::TissueMask& mask);
tissue::TissueMask read_mask_png(const std::filesystem::path& path);

/// Graph file:
///   {"format": "tissuegraph.graph", "version": 1,
///    "nodes": [{"id", "pixel_count", "bbox": [x0, y0, x1, y1], "members": [...]}],
///    "edges": [[a, b], ...]}
/// Embeddings and features are not stored.
void write_graph(const std::filesystem::path& path, const RegionGraph& graph);
RegionGraph read_graph(const std::filesystem::path& path);

/// Merge trace sidecar:
///   {"format": "tissuegraph.trace", "version": 1, "tau": t,
///    "steps": [{"a", "b", "similarity", "merged_id"}, ...]}
void write_trace(const std::filesystem::path& path, const coarsen::MergeTrace& trace, double tau);
coarsen::MergeTrace read_trace(const std::filesystem::path& path);

/// Writes `text` to `path` byte for byte.
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// Content-addressed store of stage outputs: root/<stage>/<key>/. An entry
/// is visible only after its producer finished and it was moved into place.
class StageCache {
public:
    explicit StageCache(std::filesystem::path root);

    std::filesystem::path entry(const std::string& stage, const std::string& key) const;
    bool contains(const std::string& stage, const std::string& key) const;

    /// Runs `produce` into a scratch directory unless the entry exists.
    /// Returns true on a cache hit.
    bool ensure(const std::string& stage, const std::string& key,
                const std::function<void(const std::filesystem::path&)>& produce) const;

    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

} // namespace tissuegraph::artifacts
