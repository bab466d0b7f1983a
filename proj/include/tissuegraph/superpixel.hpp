#pragma once

#include "tissuegraph/graph.hpp"
#include "tissuegraph/raster.hpp"
#include "tissuegraph/tissue.hpp"

#include <vector>

namespace tissuegraph::superpixel {

inline constexpr int kBackground = -1;

/// Per-pixel region index in [0, region_count) or kBackground.
struct LabelMap {
    int width = 0;
    int height = 0;
    int region_count = 0;
    std::vector<int> labels;

    LabelMap() = default;
    LabelMap(int w, int h)
        : width(w), height(h), labels(static_cast<std::size_t>(w) * h, kBackground) {}

    int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    int& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }

    bool operator==(const LabelMap&) const = default;
};

enum class ColorDistance { Lab, Rgb };

struct SlicParams {
    double compactness = 10.0;
    int iterations = 10;
    ColorDistance distance = ColorDistance::Lab;
};

/// K = max(1, round(area * (ref_mag / seg_mag)^2 / target_side^2)).
int target_region_count(double tissue_area, double seg_mag, double ref_mag, double target_side);

/// SLIC restricted to the mask. Output regions are 4-connected and
/// numbered in raster order of first appearance.
LabelMap slic(const raster::RgbImage& img, const tissue::TissueMask& mask, int region_count,
              const SlicParams& params = {});

/// Initial region adjacency graph under 4-adjacency. Node i has id i.
RegionGraph build_rag(const LabelMap& labels);

} // namespace tissuegraph::superpixel
