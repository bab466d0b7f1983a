#pragma once

#include "tissuegraph/raster.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace tissuegraph::io {

/// Single-channel raster as stored on disk (8- or 16-bit samples).
struct GrayRaster {
    int width = 0;
    int height = 0;
    int bit_depth = 8;
    std::vector<std::uint16_t> values;
};

/// Reads PNG (8-bit RGB/RGBA/gray/palette) or baseline TIFF
/// (uncompressed or deflate, 8-bit, chunky or planar). Alpha is dropped.
raster::RgbImage read_rgb(const std::filesystem::path& path);
raster::RgbImage read_png_rgb(const std::filesystem::path& path);
raster::RgbImage read_tiff_rgb(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const raster::RgbImage& img);

/// Gray PNG with the given bit depth (8 or 16).
void write_png_gray(const std::filesystem::path& path, const GrayRaster& img);
GrayRaster read_png_gray(const std::filesystem::path& path);

} // namespace tissuegraph::io
