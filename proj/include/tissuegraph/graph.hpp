#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace tissuegraph {

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BoundingBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    void extend(int x, int y);
    static BoundingBox merged(const BoundingBox& a, const BoundingBox& b);
    bool operator==(const BoundingBox&) const = default;
};

struct RegionNode {
    int id = 0;
    std::int64_t pixel_count = 0;
    BoundingBox bbox;
    /// Original superpixel ids covered by this node, ascending.
    std::vector<int> members;

    bool operator==(const RegionNode&) const = default;
};

/// Undirected region adjacency graph. Edges are stored once as (a, b) with
/// a < b, sorted. `embeddings` and `features` are either empty or aligned
/// with `nodes`.
struct RegionGraph {
    std::vector<RegionNode> nodes;
    std::vector<std::pair<int, int>> edges;
    std::vector<std::vector<double>> embeddings;
    std::vector<std::vector<double>> features;

    /// Position of node `id` in `nodes`, or -1.
    int index_of(int id) const;
    std::int64_t total_pixels() const;
    /// Adjacency lists by node position.
    std::vector<std::vector<int>> neighbours() const;

    bool operator==(const RegionGraph&) const = default;
};

} // namespace tissuegraph
