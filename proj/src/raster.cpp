#include "tissuegraph/raster.hpp"

#include "tissuegraph/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tissuegraph::raster {

RgbImage::RgbImage(int width, int height)
    : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
        throw InvalidArgument("RgbImage: dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(width) * height * 3, 0);
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> data)
    : width_(width), height_(height), data_(std::move(data)) {
    if (width <= 0 || height <= 0) {
        throw InvalidArgument("RgbImage: dimensions must be positive");
    }
    if (data_.size() != static_cast<std::size_t>(width) * height * 3) {
        throw InvalidArgument("RgbImage: sample count must equal width * height * 3");
    }
}

std::array<std::uint8_t, 3> RgbImage::pixel(int x, int y) const {
    const std::size_t i = index(x, y) * 3;
    return {data_[i], data_[i + 1], data_[i + 2]};
}

void RgbImage::set_pixel(int x, int y, std::array<std::uint8_t, 3> rgb) {
    const std::size_t i = index(x, y) * 3;
    data_[i] = rgb[0];
    data_[i + 1] = rgb[1];
    data_[i + 2] = rgb[2];
}

std::array<double, 3> rgb_to_hsv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
    const double r = r8 / 255.0;
    const double g = g8 / 255.0;
    const double b = b8 / 255.0;
    const double mx = std::max({r, g, b});
    const double mn = std::min({r, g, b});
    const double delta = mx - mn;

    double h = 0.0;
    if (delta > 0.0) {
        if (mx == r) {
            h = 60.0 * std::fmod((g - b) / delta, 6.0);
        } else if (mx == g) {
            h = 60.0 * ((b - r) / delta + 2.0);
        } else {
            h = 60.0 * ((r - g) / delta + 4.0);
        }
        if (h < 0.0) h += 360.0;
        if (h >= 360.0) h -= 360.0;
    }
    const double s = mx > 0.0 ? delta / mx : 0.0;
    return {h, s, mx};
}

std::array<std::uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(h, 360.0) / 60.0;
    const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = v - c;
    auto to8 = [](double u) {
        return static_cast<std::uint8_t>(std::clamp(std::lround(u * 255.0), 0L, 255L));
    };
    return {to8(r + m), to8(g + m), to8(b + m)};
}

namespace {

double srgb_to_linear(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

// D65 reference white, taken as the matrix row sums so that RGB white maps
// exactly to L = 100, a = b = 0.
constexpr double kXn = 0.4124564 + 0.3575761 + 0.1804375;
constexpr double kYn = 0.2126729 + 0.7151522 + 0.0721750;
constexpr double kZn = 0.0193339 + 0.1191920 + 0.9503041;

} // namespace

std::array<double, 3> rgb_to_lab(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
    const double r = srgb_to_linear(r8 / 255.0);
    const double g = srgb_to_linear(g8 / 255.0);
    const double b = srgb_to_linear(b8 / 255.0);

    const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;

    const double fx = lab_f(x / kXn);
    const double fy = lab_f(y / kYn);
    const double fz = lab_f(z / kZn);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

double rgb_to_gray(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return 0.299 * r + 0.587 * g + 0.114 * b;
}

std::vector<Plane> convert_color(const RgbImage& img, ColorSpace target) {
    const int w = img.width();
    const int h = img.height();
    if (target == ColorSpace::Gray) {
        Plane gray(w, h);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                gray.at(x, y) = rgb_to_gray(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
            }
        }
        return {std::move(gray)};
    }

    std::vector<Plane> planes(3, Plane(w, h));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto px = img.pixel(x, y);
            const auto v = target == ColorSpace::Hsv ? rgb_to_hsv(px[0], px[1], px[2])
                                                     : rgb_to_lab(px[0], px[1], px[2]);
            for (int c = 0; c < 3; ++c) planes[c].at(x, y) = v[c];
        }
    }
    return planes;
}

RgbImage downsample(const RgbImage& img, int factor) {
    if (factor <= 0) {
        throw InvalidArgument("downsample: factor must be >= 1");
    }
    if (factor == 1) return img;

    const int ow = (img.width() + factor - 1) / factor;
    const int oh = (img.height() + factor - 1) / factor;
    RgbImage out(ow, oh);
    for (int oy = 0; oy < oh; ++oy) {
        const int y0 = oy * factor;
        const int y1 = std::min(y0 + factor, img.height());
        for (int ox = 0; ox < ow; ++ox) {
            const int x0 = ox * factor;
            const int x1 = std::min(x0 + factor, img.width());
            const double n = static_cast<double>((y1 - y0) * (x1 - x0));
            for (int c = 0; c < 3; ++c) {
                long sum = 0;
                for (int y = y0; y < y1; ++y) {
                    for (int x = x0; x < x1; ++x) sum += img.at(x, y, c);
                }
                out.at(ox, oy, c) = static_cast<std::uint8_t>(std::lround(sum / n));
            }
        }
    }
    return out;
}

std::vector<int> quantize(std::span<const double> values, int levels) {
    if (levels < 2) {
        throw InvalidArgument("quantize: levels must be >= 2");
    }
    if (values.empty()) {
        throw InvalidArgument("quantize: empty pixel set");
    }
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it;
    const double range = *mx_it - mn;

    std::vector<int> out(values.size(), 0);
    if (range <= 0.0) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const int level = static_cast<int>(std::floor((values[i] - mn) * levels / range));
        out[i] = std::clamp(level, 0, levels - 1);
    }
    return out;
}

GrayImage quantize(const Plane& plane, int levels) {
    GrayImage out;
    out.width = plane.width;
    out.height = plane.height;
    out.levels = levels;
    out.values = quantize(std::span<const double>(plane.values), levels);
    return out;
}

} // namespace tissuegraph::raster
