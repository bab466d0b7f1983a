#include "tissuegraph/graph.hpp"

#include <algorithm>

namespace tissuegraph {

void BoundingBox::extend(int x, int y) {
    if (x0 == x1 || y0 == y1) {
        x0 = x;
        y0 = y;
        x1 = x + 1;
        y1 = y + 1;
        return;
    }
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x + 1);
    y1 = std::max(y1, y + 1);
}

BoundingBox BoundingBox::merged(const BoundingBox& a, const BoundingBox& b) {
    return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

int RegionGraph::index_of(int id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), id,
                               [](const RegionNode& n, int v) { return n.id < v; });
    if (it != nodes.end() && it->id == id) return static_cast<int>(it - nodes.begin());
    // Fall back to a scan for graphs whose nodes are not sorted by id.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].id == id) return static_cast<int>(i);
    }
    return -1;
}

std::int64_t RegionGraph::total_pixels() const {
    std::int64_t total = 0;
    for (const auto& n : nodes) total += n.pixel_count;
    return total;
}

std::vector<std::vector<int>> RegionGraph::neighbours() const {
    std::vector<std::vector<int>> adj(nodes.size());
    for (const auto& [a, b] : edges) {
        const int ia = index_of(a);
        const int ib = index_of(b);
        if (ia < 0 || ib < 0) continue;
        adj[ia].push_back(ib);
        adj[ib].push_back(ia);
    }
    for (auto& list : adj) std::sort(list.begin(), list.end());
    return adj;
}

} // namespace tissuegraph
