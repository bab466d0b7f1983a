#pragma once

#include "tissuegraph/graph.hpp"
#include "tissuegraph/raster.hpp"
#include "tissuegraph/superpixel.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <vector>

namespace tissuegraph::coarsen {

struct MergeStep {
    int a = 0;
    int b = 0;
    double similarity = 0.0;
    int merged_id = 0;

    bool operator==(const MergeStep&) const = default;
};

using MergeTrace = std::vector<MergeStep>;

struct CoarsenResult {
    RegionGraph graph;
    MergeTrace trace;
};

/// Throws InvalidArgument on dimension mismatch or a zero vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Greedy agglomeration: repeatedly merges the most similar adjacent pair
/// while its similarity exceeds `tau`. Equal similarities resolve to the
/// smallest (a, b) pair. Merged nodes get fresh ids counting up from the
/// largest input id; their embedding is the pixel-weighted mean of the pair.
/// Requires `g.embeddings` aligned with `g.nodes`. Output features are empty.
CoarsenResult coarsen(const RegionGraph& g, double tau);

/// Maps every pixel of the original superpixel map to the id of the node
/// that absorbed it. Throws CorruptTrace on ids the trace never introduced.
superpixel::LabelMap flatten_labels(const superpixel::LabelMap& original, const MergeTrace& trace);

/// Pixel indices of each label value; background pixels are skipped.
std::vector<std::vector<std::size_t>> pixels_by_label(const superpixel::LabelMap& labels);

inline constexpr int kBuiltinEmbeddingDim = 48;

/// Desk-scale region descriptor: per-channel 8-bin LAB histograms (24) and
/// GLCM contrast, correlation and energy at four directions and distances 1
/// and 2 (24), L2-normalised. One row per label value 0..max.
std::vector<std::vector<double>> builtin_embeddings(const raster::RgbImage& img,
                                                    const superpixel::LabelMap& labels);

/// Region id -> vector table stored as
///   "TGEM" u32 version u32 count u32 dim, then count x (u32 id, dim x f32),
/// little-endian.
struct EmbeddingTable {
    int dim = 0;
    std::map<int, std::vector<double>> rows;
};

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embeddings(const std::filesystem::path& path);

} // namespace tissuegraph::coarsen
