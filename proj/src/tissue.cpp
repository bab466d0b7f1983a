#include "tissuegraph/tissue.hpp"

#include "tissuegraph/error.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace tissuegraph::tissue {

std::size_t TissueMask::area() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

int otsu_threshold(const Histogram& histogram) {
    int populated = 0;
    std::uint64_t total = 0;
    long double total_sum = 0;
    for (int i = 0; i < 256; ++i) {
        if (histogram[i] > 0) ++populated;
        total += histogram[i];
        total_sum += static_cast<long double>(i) * histogram[i];
    }
    if (populated < 2) {
        throw DegenerateInput("otsu_threshold: histogram has fewer than two populated levels");
    }

    // sigma_b^2 * N^2 = (N * S0 - n0 * S)^2 / (n0 * n1); constant factors
    // dropped since only the argmax matters.
    int best_t = -1;
    long double best = -1.0L;
    std::uint64_t n0 = 0;
    long double s0 = 0;
    for (int t = 0; t < 255; ++t) {
        n0 += histogram[t];
        s0 += static_cast<long double>(t) * histogram[t];
        const std::uint64_t n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const long double diff = static_cast<long double>(total) * s0 - n0 * total_sum;
        const long double score = diff * diff / (static_cast<long double>(n0) * n1);
        if (score > best) {
            best = score;
            best_t = t;
        }
    }
    return best_t;
}

std::vector<std::uint8_t> saturation_channel(const raster::RgbImage& img) {
    std::vector<std::uint8_t> out(img.pixel_count());
    auto data = img.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int r = data[3 * i], g = data[3 * i + 1], b = data[3 * i + 2];
        const int mx = std::max({r, g, b});
        const int mn = std::min({r, g, b});
        out[i] = mx == 0 ? 0 : static_cast<std::uint8_t>(std::lround(255.0 * (mx - mn) / mx));
    }
    return out;
}

namespace {

std::vector<std::pair<int, int>> disk_offsets(int radius) {
    std::vector<std::pair<int, int>> offs;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if (dx * dx + dy * dy <= radius * radius) offs.emplace_back(dx, dy);
        }
    }
    return offs;
}

// Out-of-bounds neighbours are ignored for both operators, so erosion does
// not eat into foreground touching the image border.
TissueMask morph(const TissueMask& mask, int radius, bool dilation) {
    if (radius < 0) throw InvalidArgument("morphology radius must be >= 0");
    if (radius == 0) return mask;
    const auto offs = disk_offsets(radius);
    TissueMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            bool v = !dilation;
            for (const auto& [dx, dy] : offs) {
                const int nx = x + dx, ny = y + dy;
                if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height) continue;
                const bool m = mask.at(nx, ny);
                if (dilation && m) { v = true; break; }
                if (!dilation && !m) { v = false; break; }
            }
            out.set(x, y, v);
        }
    }
    return out;
}

} // namespace

TissueMask dilate(const TissueMask& mask, int radius) { return morph(mask, radius, true); }
TissueMask erode(const TissueMask& mask, int radius) { return morph(mask, radius, false); }
TissueMask close(const TissueMask& mask, int radius) { return erode(dilate(mask, radius), radius); }
TissueMask open(const TissueMask& mask, int radius) { return dilate(erode(mask, radius), radius); }

TissueMask remove_small_components(const TissueMask& mask, int min_area) {
    TissueMask out = mask;
    std::vector<std::uint8_t> seen(mask.bits.size(), 0);
    std::vector<std::size_t> stack, component;
    const int w = mask.width, h = mask.height;
    for (std::size_t start = 0; start < mask.bits.size(); ++start) {
        if (!mask.bits[start] || seen[start]) continue;
        component.clear();
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            component.push_back(p);
            const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
                    if (mask.bits[q] && !seen[q]) {
                        seen[q] = 1;
                        stack.push_back(q);
                    }
                }
            }
        }
        if (static_cast<long>(component.size()) < min_area) {
            for (auto p : component) out.bits[p] = 0;
        }
    }
    return out;
}

TissueMask segment_tissue(const raster::RgbImage& img, const MorphologyParams& params) {
    const auto sat = saturation_channel(img);
    Histogram hist{};
    for (auto s : sat) ++hist[s];

    int threshold;
    try {
        threshold = otsu_threshold(hist);
    } catch (const DegenerateInput&) {
        throw NoTissueFound("segment_tissue: saturation is constant, no foreground to separate");
    }

    TissueMask mask(img.width(), img.height());
    for (std::size_t i = 0; i < sat.size(); ++i) mask.bits[i] = sat[i] > threshold ? 1 : 0;

    mask = close(mask, params.close_radius);
    mask = open(mask, params.open_radius);
    mask = remove_small_components(mask, params.min_component_area);
    if (mask.area() == 0) {
        throw NoTissueFound("segment_tissue: mask is empty after morphological cleanup");
    }
    return mask;
}

} // namespace tissuegraph::tissue
