#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tissuegraph::raster {

/// Row-major, interleaved 8-bit RGB image.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int width, int height);
    RgbImage(int width, int height, std::vector<std::uint8_t> data);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
    bool empty() const { return width_ == 0 || height_ == 0; }

    std::uint8_t& at(int x, int y, int c) { return data_[index(x, y) * 3 + c]; }
    std::uint8_t at(int x, int y, int c) const { return data_[index(x, y) * 3 + c]; }
    std::array<std::uint8_t, 3> pixel(int x, int y) const;
    void set_pixel(int x, int y, std::array<std::uint8_t, 3> rgb);

    std::span<const std::uint8_t> data() const { return data_; }
    std::span<std::uint8_t> data() { return data_; }

    bool operator==(const RgbImage&) const = default;

private:
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

/// One real-valued channel over an image grid.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    Plane() = default;
    Plane(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0) {}

    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Quantized gray levels in [0, levels - 1].
struct GrayImage {
    int width = 0;
    int height = 0;
    int levels = 2;
    std::vector<int> values;
};

enum class ColorSpace { Hsv, Lab, Gray };

// Per-pixel conversions. HSV: H in [0, 360), S and V in [0, 1].
// LAB: sRGB companding, D65 reference white, L in [0, 100].
std::array<double, 3> rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b);
std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v);
std::array<double, 3> rgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);
double rgb_to_gray(std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Returns one plane per output channel (three for HSV/LAB, one for GRAY).
std::vector<Plane> convert_color(const RgbImage& img, ColorSpace target);

/// Mean-pools factor x factor blocks; edge blocks are truncated. Output
/// samples round half away from zero.
RgbImage downsample(const RgbImage& img, int factor);

/// Fixed-bin-count quantization over [min, max] of `values`: bin width is
/// (max - min) / levels and the maximum lands in the top level. A constant
/// input maps entirely to level 0.
std::vector<int> quantize(std::span<const double> values, int levels);

/// Quantizes a whole plane; range taken over every sample in it.
GrayImage quantize(const Plane& plane, int levels);

} // namespace tissuegraph::raster
