#include "tissuegraph/image_io.hpp"

#include "tissuegraph/error.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

namespace tissuegraph::io {

namespace fs = std::filesystem;
using raster::RgbImage;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.string().c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

// libpng reports errors through longjmp; the message is stashed for the
// caller to rethrow as an exception once control is back in C++ frames.
thread_local std::string g_png_error;

void png_error_fn(png_structp png, png_const_charp msg) {
    g_png_error = msg ? msg : "unknown error";
    png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Decoded PNG, normalized to 8-bit or 16-bit samples per channel.
struct DecodedPng {
    int width = 0;
    int height = 0;
    int channels = 0;
    int bit_depth = 8;
    std::vector<std::uint8_t> rows;
};

DecodedPng decode_png(const fs::path& path, bool keep_16bit) {
    auto file = open_file(path, "rb");
    std::uint8_t sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw IoError("not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn,
                                             png_warning_fn);
    png_infop info = png_create_info_struct(png);
    DecodedPng out;
    std::vector<png_bytep> ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng: " + g_png_error + " (" + path.string() + ")");
    }
    {
        png_init_io(png, file.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);

        const auto color = png_get_color_type(png, info);
        const int depth = png_get_bit_depth(png, info);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
        if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
        if (depth == 16 && !keep_16bit) png_set_strip_16(png);
        if (depth == 16 && keep_16bit) png_set_swap(png);
        png_read_update_info(png, info);

        out.width = static_cast<int>(png_get_image_width(png, info));
        out.height = static_cast<int>(png_get_image_height(png, info));
        out.channels = png_get_channels(png, info);
        out.bit_depth = png_get_bit_depth(png, info);
        const std::size_t rowbytes = png_get_rowbytes(png, info);
        out.rows.resize(rowbytes * out.height);
        ptrs.resize(out.height);
        for (int y = 0; y < out.height; ++y) ptrs[y] = out.rows.data() + y * rowbytes;
        png_read_image(png, ptrs.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void encode_png(const fs::path& path, int width, int height, int color_type, int bit_depth,
                const std::vector<png_bytep>& rows) {
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_fn,
                                              png_warning_fn);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng: " + g_png_error + " (" + path.string() + ")");
    }
    {
        png_init_io(png, file.get());
        png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        if (bit_depth == 16) png_set_swap(png);
        png_write_image(png, const_cast<png_bytepp>(rows.data()));
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
}

// --- TIFF -----------------------------------------------------------------

class TiffReader {
public:
    explicit TiffReader(std::vector<std::uint8_t> bytes) : b_(std::move(bytes)) {
        if (b_.size() < 8) throw IoError("TIFF: file too short");
        if (b_[0] == 'I' && b_[1] == 'I') little_ = true;
        else if (b_[0] == 'M' && b_[1] == 'M') little_ = false;
        else throw IoError("TIFF: bad byte-order mark");
        if (u16(2) != 42) throw IoError("TIFF: bad magic (BigTIFF is not supported)");
    }

    RgbImage decode() {
        const std::uint32_t ifd = u32(4);
        check(ifd, 2);
        const std::uint16_t count = u16(ifd);
        for (std::uint16_t i = 0; i < count; ++i) read_entry(ifd + 2 + 12u * i);

        if (width_ == 0 || height_ == 0) throw IoError("TIFF: missing dimensions");
        if (tiled_) throw IoError("TIFF: tiled layout is not supported");
        if (compression_ != 1 && compression_ != 8 && compression_ != 32946) {
            throw IoError("TIFF: unsupported compression " + std::to_string(compression_));
        }
        for (auto bps : bits_) {
            if (bps != 8) throw IoError("TIFF: only 8-bit samples are supported");
        }
        if (samples_ != 1 && samples_ < 3) throw IoError("TIFF: unsupported sample count");
        if (offsets_.size() != counts_.size() || offsets_.empty()) {
            throw IoError("TIFF: strip table mismatch");
        }

        const bool planar = planar_config_ == 2 && samples_ > 1;
        const std::size_t row_samples = planar ? width_ : std::size_t(width_) * samples_;
        const std::uint32_t rps = std::min(rows_per_strip_, height_);
        const std::size_t strips_per_plane = (height_ + rps - 1) / rps;
        const std::size_t planes = planar ? samples_ : 1;
        if (offsets_.size() < strips_per_plane * planes) throw IoError("TIFF: too few strips");

        std::vector<std::vector<std::uint8_t>> plane_data(planes);
        for (std::size_t p = 0; p < planes; ++p) {
            auto& dst = plane_data[p];
            dst.reserve(row_samples * height_);
            for (std::size_t s = 0; s < strips_per_plane; ++s) {
                const std::size_t k = p * strips_per_plane + s;
                check(offsets_[k], counts_[k]);
                const std::uint32_t rows_here =
                    std::min<std::uint32_t>(rps, height_ - static_cast<std::uint32_t>(s * rps));
                const std::size_t expected = row_samples * rows_here;
                std::vector<std::uint8_t> strip = strip_bytes(k, expected);
                if (predictor_ == 2) undo_predictor(strip, rows_here, planar ? 1 : samples_);
                dst.insert(dst.end(), strip.begin(), strip.begin() + expected);
            }
        }

        RgbImage img(static_cast<int>(width_), static_cast<int>(height_));
        for (std::uint32_t y = 0; y < height_; ++y) {
            for (std::uint32_t x = 0; x < width_; ++x) {
                std::array<std::uint8_t, 3> px{};
                for (int c = 0; c < 3; ++c) {
                    const int src_c = samples_ == 1 ? 0 : c;
                    std::uint8_t v;
                    if (planar) {
                        v = plane_data[src_c][std::size_t(y) * width_ + x];
                    } else {
                        v = plane_data[0][(std::size_t(y) * width_ + x) * samples_ + src_c];
                    }
                    if (samples_ == 1 && photometric_ == 0) v = static_cast<std::uint8_t>(255 - v);
                    px[c] = v;
                }
                img.set_pixel(static_cast<int>(x), static_cast<int>(y), px);
            }
        }
        return img;
    }

private:
    void check(std::size_t off, std::size_t len) const {
        if (off + len > b_.size()) throw IoError("TIFF: offset out of range");
    }

    std::uint16_t u16(std::size_t off) const {
        check(off, 2);
        return little_ ? std::uint16_t(b_[off] | (b_[off + 1] << 8))
                       : std::uint16_t((b_[off] << 8) | b_[off + 1]);
    }

    std::uint32_t u32(std::size_t off) const {
        check(off, 4);
        if (little_) {
            return std::uint32_t(b_[off]) | (std::uint32_t(b_[off + 1]) << 8) |
                   (std::uint32_t(b_[off + 2]) << 16) | (std::uint32_t(b_[off + 3]) << 24);
        }
        return (std::uint32_t(b_[off]) << 24) | (std::uint32_t(b_[off + 1]) << 16) |
               (std::uint32_t(b_[off + 2]) << 8) | std::uint32_t(b_[off + 3]);
    }

    std::vector<std::uint32_t> values(std::size_t entry) const {
        const std::uint16_t type = u16(entry + 2);
        const std::uint32_t n = u32(entry + 4);
        const std::size_t size = type == 3 ? 2 : type == 4 ? 4 : type == 1 ? 1 : 0;
        if (size == 0) return {};
        const std::size_t total = size * n;
        const std::size_t base = total <= 4 ? entry + 8 : u32(entry + 8);
        check(base, total);
        std::vector<std::uint32_t> out(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            out[i] = size == 2 ? u16(base + 2 * i) : size == 4 ? u32(base + 4 * i) : b_[base + i];
        }
        return out;
    }

    void read_entry(std::size_t entry) {
        const std::uint16_t tag = u16(entry);
        auto v = values(entry);
        auto first = [&]() -> std::uint32_t {
            if (v.empty()) throw IoError("TIFF: empty tag " + std::to_string(tag));
            return v[0];
        };
        switch (tag) {
            case 256: width_ = first(); break;
            case 257: height_ = first(); break;
            case 258: bits_ = v; break;
            case 259: compression_ = first(); break;
            case 262: photometric_ = first(); break;
            case 273: offsets_ = v; break;
            case 277: samples_ = first(); break;
            case 278: rows_per_strip_ = first(); break;
            case 279: counts_ = v; break;
            case 284: planar_config_ = first(); break;
            case 317: predictor_ = first(); break;
            case 322: tiled_ = true; break;
            default: break;
        }
    }

    std::vector<std::uint8_t> strip_bytes(std::size_t k, std::size_t expected) const {
        const std::uint8_t* src = b_.data() + offsets_[k];
        if (compression_ == 1) {
            if (counts_[k] < expected) throw IoError("TIFF: truncated strip");
            return {src, src + counts_[k]};
        }
        std::vector<std::uint8_t> out(expected);
        uLongf out_len = static_cast<uLongf>(expected);
        const int rc = uncompress(out.data(), &out_len, src, counts_[k]);
        if (rc != Z_OK || out_len != expected) throw IoError("TIFF: deflate strip is corrupt");
        return out;
    }

    void undo_predictor(std::vector<std::uint8_t>& strip, std::uint32_t rows, std::uint32_t spp) const {
        const std::size_t row_len = std::size_t(width_) * spp;
        for (std::uint32_t r = 0; r < rows; ++r) {
            std::uint8_t* row = strip.data() + r * row_len;
            for (std::size_t i = spp; i < row_len; ++i) row[i] = std::uint8_t(row[i] + row[i - spp]);
        }
    }

    std::vector<std::uint8_t> b_;
    bool little_ = true;
    std::uint32_t width_ = 0;
    std::uint32_t height_ = 0;
    std::vector<std::uint32_t> bits_{8};
    std::uint32_t compression_ = 1;
    std::uint32_t photometric_ = 2;
    std::vector<std::uint32_t> offsets_;
    std::vector<std::uint32_t> counts_;
    std::uint32_t samples_ = 1;
    std::uint32_t rows_per_strip_ = 0xFFFFFFFFu;
    std::uint32_t planar_config_ = 1;
    std::uint32_t predictor_ = 1;
    bool tiled_ = false;
};

std::string lower_ext(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e;
}

} // namespace

RgbImage read_png_rgb(const fs::path& path) {
    const DecodedPng png = decode_png(path, false);
    RgbImage img(png.width, png.height);
    const std::size_t rowbytes = png.rows.size() / png.height;
    for (int y = 0; y < png.height; ++y) {
        const std::uint8_t* row = png.rows.data() + y * rowbytes;
        for (int x = 0; x < png.width; ++x) {
            const std::uint8_t* p = row + std::size_t(x) * png.channels;
            if (png.channels >= 3) {
                img.set_pixel(x, y, {p[0], p[1], p[2]});
            } else {
                img.set_pixel(x, y, {p[0], p[0], p[0]});
            }
        }
    }
    return img;
}

RgbImage read_tiff_rgb(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return TiffReader(std::move(bytes)).decode();
}

RgbImage read_rgb(const fs::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".tif" || ext == ".tiff") return read_tiff_rgb(path);
    return read_png_rgb(path);
}

void write_png_rgb(const fs::path& path, const RgbImage& img) {
    std::vector<png_bytep> rows(img.height());
    auto data = img.data();
    for (int y = 0; y < img.height(); ++y) {
        rows[y] = const_cast<png_bytep>(data.data() + std::size_t(y) * img.width() * 3);
    }
    encode_png(path, img.width(), img.height(), PNG_COLOR_TYPE_RGB, 8, rows);
}

void write_png_gray(const fs::path& path, const GrayRaster& img) {
    if (img.bit_depth != 8 && img.bit_depth != 16) {
        throw InvalidArgument("write_png_gray: bit depth must be 8 or 16");
    }
    if (img.values.size() != std::size_t(img.width) * img.height) {
        throw InvalidArgument("write_png_gray: sample count mismatch");
    }
    const std::size_t bpp = img.bit_depth / 8;
    std::vector<std::uint8_t> buffer(img.values.size() * bpp);
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        if (bpp == 1) {
            buffer[i] = static_cast<std::uint8_t>(std::min<std::uint16_t>(img.values[i], 255));
        } else {
            std::memcpy(buffer.data() + 2 * i, &img.values[i], 2);
        }
    }
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + std::size_t(y) * img.width * bpp;
    encode_png(path, img.width, img.height, PNG_COLOR_TYPE_GRAY, img.bit_depth, rows);
}

GrayRaster read_png_gray(const fs::path& path) {
    const DecodedPng png = decode_png(path, true);
    GrayRaster out;
    out.width = png.width;
    out.height = png.height;
    out.bit_depth = png.bit_depth;
    out.values.resize(std::size_t(png.width) * png.height);
    const std::size_t rowbytes = png.rows.size() / png.height;
    const std::size_t bps = png.bit_depth == 16 ? 2 : 1;
    for (int y = 0; y < png.height; ++y) {
        const std::uint8_t* row = png.rows.data() + y * rowbytes;
        for (int x = 0; x < png.width; ++x) {
            const std::uint8_t* p = row + std::size_t(x) * png.channels * bps;
            std::uint16_t v;
            if (bps == 2) std::memcpy(&v, p, 2);
            else v = p[0];
            out.values[std::size_t(y) * png.width + x] = v;
        }
    }
    return out;
}

} // namespace tissuegraph::io
