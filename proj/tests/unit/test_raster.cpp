#include "doctest.h"
#include "fixtures.hpp"

#include "tissuegraph/error.hpp"
#include "tissuegraph/image_io.hpp"
#include "tissuegraph/raster.hpp"

#include <zlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace tissuegraph;
using namespace tissuegraph::raster;

namespace {

// Independent sRGB -> LAB evaluation written directly from the CIE formulas.
std::array<double, 3> lab_reference(int r8, int g8, int b8) {
    auto lin = [](int v) {
        const double c = v / 255.0;
        return c > 0.04045 ? std::pow((c + 0.055) / 1.055, 2.4) : c / 12.92;
    };
    const double r = lin(r8), g = lin(g8), b = lin(b8);
    const double xyz[3] = {
        (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.9504700,
        (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.0000001,
        (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.0888300,
    };
    double f[3];
    for (int i = 0; i < 3; ++i) {
        const double t = xyz[i];
        f[i] = t > 216.0 / 24389.0 ? std::cbrt(t) : (24389.0 / 27.0 * t + 16.0) / 116.0;
    }
    return {116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])};
}

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "tissuegraph_test_raster";
    std::filesystem::create_directories(dir);
    return dir / name;
}

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(v & 0xFF);
    b.push_back(v >> 8);
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xFF);
}

// Little-endian single-strip RGB TIFF; compression 1 (none) or 8 (deflate).
std::vector<std::uint8_t> make_tiff(const RgbImage& img, int compression) {
    std::vector<std::uint8_t> pixels(img.data().begin(), img.data().end());
    if (compression == 8) {
        uLongf len = compressBound(pixels.size());
        std::vector<std::uint8_t> z(len);
        REQUIRE(compress(z.data(), &len, pixels.data(), pixels.size()) == Z_OK);
        z.resize(len);
        pixels = z;
    }
    std::vector<std::uint8_t> b = {'I', 'I'};
    put16(b, 42);
    const std::uint32_t bps_offset = 8;
    const std::uint32_t data_offset = 16;
    const std::uint32_t ifd_offset = data_offset + static_cast<std::uint32_t>(pixels.size());
    put32(b, ifd_offset);
    put16(b, 8); put16(b, 8); put16(b, 8); put16(b, 0);
    b.insert(b.end(), pixels.begin(), pixels.end());
    struct Entry { std::uint16_t tag, type; std::uint32_t count, value; };
    const Entry entries[] = {
        {256, 4, 1, static_cast<std::uint32_t>(img.width())},
        {257, 4, 1, static_cast<std::uint32_t>(img.height())},
        {258, 3, 3, bps_offset},
        {259, 3, 1, static_cast<std::uint32_t>(compression)},
        {262, 3, 1, 2},
        {273, 4, 1, data_offset},
        {277, 3, 1, 3},
        {278, 4, 1, static_cast<std::uint32_t>(img.height())},
        {279, 4, 1, static_cast<std::uint32_t>(pixels.size())},
    };
    put16(b, static_cast<std::uint16_t>(std::size(entries)));
    for (const auto& e : entries) {
        put16(b, e.tag);
        put16(b, e.type);
        put32(b, e.count);
        if (e.type == 3 && e.count == 1) {
            put16(b, static_cast<std::uint16_t>(e.value));
            put16(b, 0);
        } else {
            put32(b, e.value);
        }
    }
    put32(b, 0);
    return b;
}

} // namespace

TEST_CASE("image rejects non-positive dimensions and wrong sample counts") {
    CHECK_THROWS_AS(RgbImage(0, 3), InvalidArgument);
    CHECK_THROWS_AS(RgbImage(2, 2, std::vector<std::uint8_t>(11)), InvalidArgument);
    CHECK_NOTHROW(RgbImage(2, 2, std::vector<std::uint8_t>(12)));
}

TEST_CASE("color conversion fixed points") {
    const auto white = rgb_to_lab(255, 255, 255);
    CHECK(white[0] == doctest::Approx(100.0).epsilon(1e-6));
    CHECK(std::abs(white[1]) < 1e-6);
    CHECK(std::abs(white[2]) < 1e-6);

    const auto red = rgb_to_hsv(255, 0, 0);
    CHECK(red[0] == 0.0);
    CHECK(red[1] == 1.0);
    CHECK(red[2] == 1.0);

    CHECK(rgb_to_gray(10, 20, 30) == doctest::Approx(0.299 * 10 + 0.587 * 20 + 0.114 * 30));
}

TEST_CASE("LAB of (100,150,200) matches reference evaluation") {
    const auto lab = rgb_to_lab(100, 150, 200);
    // Frozen from an independent colour-science library evaluation.
    const double frozen[3] = {60.50709675, -2.78968421, -30.92676978};
    const auto ref = lab_reference(100, 150, 200);
    for (int c = 0; c < 3; ++c) {
        CHECK(std::abs(lab[c] - frozen[c]) < 0.01);
        CHECK(std::abs(lab[c] - ref[c]) < 1e-9);
    }
}

TEST_CASE("convert_color plane shapes and ranges") {
    std::mt19937_64 rng(7);
    const auto img = fixtures::random_image(rng, 13, 9);
    const auto gray = convert_color(img, ColorSpace::Gray);
    REQUIRE(gray.size() == 1);
    for (double v : gray[0].values) CHECK((v >= 0.0 && v <= 255.0));
    const auto hsv = convert_color(img, ColorSpace::Hsv);
    REQUIRE(hsv.size() == 3);
    for (std::size_t i = 0; i < hsv[0].values.size(); ++i) {
        CHECK((hsv[0].values[i] >= 0.0 && hsv[0].values[i] < 360.0));
        CHECK((hsv[1].values[i] >= 0.0 && hsv[1].values[i] <= 1.0));
        CHECK((hsv[2].values[i] >= 0.0 && hsv[2].values[i] <= 1.0));
    }
    const auto lab = convert_color(img, ColorSpace::Lab);
    for (double l : lab[0].values) CHECK((l >= 0.0 && l <= 100.0 + 1e-9));
}

TEST_CASE("HSV round trip within one level") {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20000; ++i) {
        const std::uint8_t r = fixtures::rand_byte(rng), g = fixtures::rand_byte(rng), b = fixtures::rand_byte(rng);
        const auto hsv = rgb_to_hsv(r, g, b);
        const auto back = hsv_to_rgb(hsv[0], hsv[1], hsv[2]);
        CHECK(std::abs(back[0] - r) <= 1);
        CHECK(std::abs(back[1] - g) <= 1);
        CHECK(std::abs(back[2] - b) <= 1);
    }
}

TEST_CASE("downsample examples") {
    std::mt19937_64 rng(3);
    const auto img = fixtures::random_image(rng, 7, 4);
    CHECK(downsample(img, 1) == img);
    CHECK_THROWS_AS(downsample(img, 0), InvalidArgument);

    RgbImage two(2, 2, {0, 0, 0, 0, 0, 0, 255, 255, 255, 255, 255, 255});
    const auto one = downsample(two, 2);
    REQUIRE(one.width() == 1);
    CHECK(one.at(0, 0, 0) == 128);

    const auto five = downsample(fixtures::random_image(rng, 5, 5), 2);
    CHECK(five.width() == 3);
    CHECK(five.height() == 3);
}

TEST_CASE("downsample composes within one level") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int a = fixtures::rand_int(rng, 1, 4), b = fixtures::rand_int(rng, 1, 4);
        // Block means only nest when the first factor tiles the image exactly.
        const int w = a * fixtures::rand_int(rng, 1, 12), h = a * fixtures::rand_int(rng, 1, 12);
        const auto img = fixtures::random_image(rng, w, h);
        const auto two_step = downsample(downsample(img, a), b);
        const auto one_step = downsample(img, a * b);
        REQUIRE(two_step.width() == one_step.width());
        REQUIRE(two_step.height() == one_step.height());
        for (std::size_t i = 0; i < one_step.data().size(); ++i) {
            CHECK(std::abs(int(two_step.data()[i]) - int(one_step.data()[i])) <= 1);
        }
    }
}

TEST_CASE("quantize examples") {
    std::vector<double> constant(10, 42.0);
    for (int v : quantize(constant, 32)) CHECK(v == 0);

    std::vector<double> ramp(256);
    for (int i = 0; i < 256; ++i) ramp[i] = i;
    const auto q = quantize(ramp, 32);
    CHECK(q[255] == 31);
    for (int i = 0; i < 255; ++i) CHECK(q[i] == i / 8);

    const std::vector<double> two = {10.0, 20.0};
    CHECK(quantize(two, 2) == std::vector<int>{0, 1});

    CHECK_THROWS_AS(quantize(std::vector<double>{}, 4), InvalidArgument);
    CHECK_THROWS_AS(quantize(two, 1), InvalidArgument);
}

TEST_CASE("quantize is monotone and in range") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(100);
        for (auto& x : v) x = fixtures::rand_range(rng, -50, 50);
        const int levels = fixtures::rand_int(rng, 2, 64);
        const auto q = quantize(v, levels);
        for (std::size_t i = 0; i < v.size(); ++i) {
            CHECK((q[i] >= 0 && q[i] < levels));
            for (std::size_t j = 0; j < v.size(); ++j) {
                if (v[i] <= v[j]) CHECK(q[i] <= q[j]);
            }
        }
    }
}

TEST_CASE("PNG round trips") {
    std::mt19937_64 rng(13);
    const auto img = fixtures::random_image(rng, 17, 5);
    const auto p = temp_path("rgb.png");
    io::write_png_rgb(p, img);
    CHECK(io::read_rgb(p) == img);

    io::GrayRaster g16{6, 3, 16, {}};
    for (int i = 0; i < 18; ++i) g16.values.push_back(static_cast<std::uint16_t>(i * 3000 + 7));
    g16.values[4] = 65535;
    const auto q = temp_path("gray16.png");
    io::write_png_gray(q, g16);
    const auto back = io::read_png_gray(q);
    CHECK(back.bit_depth == 16);
    CHECK(back.values == g16.values);

    CHECK_THROWS_AS(io::read_rgb(temp_path("missing.png")), IoError);
    std::ofstream(temp_path("junk.png")) << "not an image";
    CHECK_THROWS_AS(io::read_rgb(temp_path("junk.png")), IoError);
}

TEST_CASE("TIFF reader decodes uncompressed and deflate strips") {
    std::mt19937_64 rng(17);
    const auto img = fixtures::random_image(rng, 9, 7);
    for (int compression : {1, 8}) {
        const auto bytes = make_tiff(img, compression);
        const auto p = temp_path("img" + std::to_string(compression) + ".tif");
        std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                 static_cast<std::streamsize>(bytes.size()));
        CHECK(io::read_rgb(p) == img);
    }
}
