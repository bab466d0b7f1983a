#pragma once

#include "tissuegraph/raster.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace tissuegraph::tissue {

/// Foreground mask, one byte (0/1) per pixel.
struct TissueMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    TissueMask() = default;
    TissueMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t area() const;

    bool operator==(const TissueMask&) const = default;
};

struct MorphologyParams {
    int close_radius = 4;
    int open_radius = 2;
    int min_component_area = 64;
};

using Histogram = std::array<std::uint64_t, 256>;

/// Otsu's threshold: the level t maximizing the between-class variance of
/// {<= t} vs {> t}. Ties resolve to the smallest t. Throws DegenerateInput
/// when fewer than two bins are populated.
int otsu_threshold(const Histogram& histogram);

/// Saturation scaled to 0..255 (rounded), as used for thresholding.
std::vector<std::uint8_t> saturation_channel(const raster::RgbImage& img);

TissueMask dilate(const TissueMask& mask, int radius);
TissueMask erode(const TissueMask& mask, int radius);
TissueMask close(const TissueMask& mask, int radius);
TissueMask open(const TissueMask& mask, int radius);

/// Drops 8-connected foreground components smaller than `min_area`.
TissueMask remove_small_components(const TissueMask& mask, int min_area);

/// Saturation > Otsu threshold, then closing, opening and small-component
/// removal. Throws NoTissueFound if nothing survives.
TissueMask segment_tissue(const raster::RgbImage& img, const MorphologyParams& params = {});

} // namespace tissuegraph::tissue
