#pragma once

#include "tissuegraph/raster.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace fixtures {

inline std::uint8_t rand_byte(std::mt19937_64& rng) { return static_cast<std::uint8_t>(rng() & 0xFF); }

inline int rand_int(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

inline double rand_unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double rand_range(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * rand_unit(rng); }

inline tissuegraph::raster::RgbImage random_image(std::mt19937_64& rng, int w, int h) {
    tissuegraph::raster::RgbImage img(w, h);
    for (auto& v : img.data()) v = rand_byte(rng);
    return img;
}

/// Pink disk of the given radius centred in a white canvas.
inline tissuegraph::raster::RgbImage pink_disk(int w, int h, double radius) {
    tissuegraph::raster::RgbImage img(w, h);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const bool inside = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius;
            img.set_pixel(x, y, inside ? std::array<std::uint8_t, 3>{230, 130, 180}
                                       : std::array<std::uint8_t, 3>{255, 255, 255});
        }
    }
    return img;
}

} // namespace fixtures
