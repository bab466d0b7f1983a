#include "tissuegraph/artifacts.hpp"

#include "tissuegraph/error.hpp"
#include "tissuegraph/image_io.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

namespace tissuegraph::artifacts {

using nlohmann::json;
namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 15]);
    }
    return out;
}

std::string file_digest(const fs::path& path) { return sha256_hex(read_text(path)); }

void write_text(const fs::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_label_png(const fs::path& path, const superpixel::LabelMap& labels) {
    io::GrayRaster r;
    r.width = labels.width;
    r.height = labels.height;
    r.bit_depth = 16;
    r.values.reserve(labels.labels.size());
    for (int v : labels.labels) {
        if (v >= kBackgroundSample) throw InvalidArgument("label " + std::to_string(v) + " does not fit a 16-bit label image");
        r.values.push_back(v == superpixel::kBackground ? kBackgroundSample : static_cast<std::uint16_t>(v));
    }
    io::write_png_gray(path, r);
}

superpixel::LabelMap read_label_png(const fs::path& path) {
    const auto r = io::read_png_gray(path);
    if (r.bit_depth != 16) throw IoError(path.string() + ": label image must be 16-bit");
    superpixel::LabelMap labels(r.width, r.height);
    int max_label = -1;
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        labels.labels[i] = r.values[i] == kBackgroundSample ? superpixel::kBackground : r.values[i];
        max_label = std::max(max_label, labels.labels[i]);
    }
    labels.region_count = max_label + 1;
    return labels;
}

void write_mask_png(const fs::path& path, const tissue::TissueMask& mask) {
    io::GrayRaster r;
    r.width = mask.width;
    r.height = mask.height;
    r.bit_depth = 8;
    r.values.reserve(mask.bits.size());
    for (auto b : mask.bits) r.values.push_back(b ? 255 : 0);
    io::write_png_gray(path, r);
}

tissue::TissueMask read_mask_png(const fs::path& path) {
    const auto r = io::read_png_gray(path);
    tissue::TissueMask mask(r.width, r.height);
    for (std::size_t i = 0; i < r.values.size(); ++i) mask.bits[i] = r.values[i] != 0;
    return mask;
}

void write_graph(const fs::path& path, const RegionGraph& graph) {
    json nodes = json::array();
    for (const auto& n : graph.nodes) {
        nodes.push_back({{"id", n.id},
                         {"pixel_count", n.pixel_count},
                         {"bbox", {n.bbox.x0, n.bbox.y0, n.bbox.x1, n.bbox.y1}},
                         {"members", n.members}});
    }
    json edges = json::array();
    for (auto [a, b] : graph.edges) edges.push_back({a, b});
    const json j = {{"format", "tissuegraph.graph"}, {"version", 1}, {"nodes", nodes}, {"edges", edges}};
    write_text(path, j.dump() + "\n");
}

RegionGraph read_graph(const fs::path& path) {
    try {
        const auto j = json::parse(read_text(path));
        if (j.at("format") != "tissuegraph.graph" || j.at("version") != 1) {
            throw IoError(path.string() + ": not a version 1 graph file");
        }
        RegionGraph g;
        for (const auto& n : j.at("nodes")) {
            RegionNode node;
            node.id = n.at("id").get<int>();
            node.pixel_count = n.at("pixel_count").get<std::int64_t>();
            const auto& b = n.at("bbox");
            node.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
            node.members = n.at("members").get<std::vector<int>>();
            g.nodes.push_back(std::move(node));
        }
        for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
        return g;
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed graph file (" + e.what() + ")");
    }
}

void write_trace(const fs::path& path, const coarsen::MergeTrace& trace, double tau) {
    json steps = json::array();
    for (const auto& s : trace) {
        steps.push_back({{"a", s.a}, {"b", s.b}, {"similarity", s.similarity}, {"merged_id", s.merged_id}});
    }
    const json j = {{"format", "tissuegraph.trace"}, {"version", 1}, {"tau", tau}, {"steps", steps}};
    write_text(path, j.dump() + "\n");
}

coarsen::MergeTrace read_trace(const fs::path& path) {
    try {
        const auto j = json::parse(read_text(path));
        if (j.at("format") != "tissuegraph.trace" || j.at("version") != 1) {
            throw IoError(path.string() + ": not a version 1 trace file");
        }
        coarsen::MergeTrace trace;
        for (const auto& s : j.at("steps")) {
            trace.push_back({s.at("a").get<int>(), s.at("b").get<int>(), s.at("similarity").get<double>(),
                             s.at("merged_id").get<int>()});
        }
        return trace;
    } catch (const json::exception& e) {
        throw IoError(path.string() + ": malformed trace file (" + e.what() + ")");
    }
}

StageCache::StageCache(fs::path root) : root_(std::move(root)) {}

fs::path StageCache::entry(const std::string& stage, const std::string& key) const { return root_ / stage / key; }

bool StageCache::contains(const std::string& stage, const std::string& key) const {
    return fs::is_directory(entry(stage, key));
}

bool StageCache::ensure(const std::string& stage, const std::string& key,
                        const std::function<void(const fs::path&)>& produce) const {
    const auto target = entry(stage, key);
    if (fs::is_directory(target)) return true;
    static std::atomic<std::uint64_t> counter{0};
    std::ostringstream tag;
    tag << key << ".tmp-" << std::this_thread::get_id() << "-" << counter++;
    const auto scratch = root_ / stage / tag.str();
    fs::create_directories(scratch);
    try {
        produce(scratch);
    } catch (...) {
        fs::remove_all(scratch);
        throw;
    }
    std::error_code ec;
    fs::rename(scratch, target, ec);
    // Another worker may have published the same entry first.
    if (ec) fs::remove_all(scratch);
    if (!fs::is_directory(target)) throw IoError("cannot publish cache entry " + target.string());
    return false;
}

} // namespace tissuegraph::artifacts
