#include "tissuegraph/coarsen.hpp"

#include "binio.hpp"
#include "tissuegraph/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>

namespace tissuegraph::coarsen {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) throw InvalidArgument("cosine_similarity: zero vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

namespace {

struct Live {
    RegionNode node;
    std::vector<double> embedding;
    std::set<int> adjacent;
    bool alive = true;
};

struct Candidate {
    double similarity;
    int a;
    int b;
};

// Max-heap on similarity; equal similarities pop the smallest (a, b) first.
struct CandidateOrder {
    bool operator()(const Candidate& x, const Candidate& y) const {
        if (x.similarity != y.similarity) return x.similarity < y.similarity;
        if (x.a != y.a) return x.a > y.a;
        return x.b > y.b;
    }
};

double similarity_or_zero(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

} // namespace

CoarsenResult coarsen(const RegionGraph& g, double tau) {
    if (!(tau >= -1.0 && tau <= 1.0)) throw InvalidArgument("coarsen: tau must lie in [-1, 1]");
    if (g.embeddings.size() != g.nodes.size()) {
        throw InvalidArgument("coarsen: every node needs an embedding");
    }
    const std::size_t dim = g.nodes.empty() ? 0 : g.embeddings.front().size();
    for (const auto& e : g.embeddings) {
        if (e.size() != dim) throw InvalidArgument("coarsen: embedding dimension mismatch");
        for (double v : e) {
            if (!std::isfinite(v)) throw InvalidArgument("coarsen: non-finite embedding entry");
        }
        if (std::all_of(e.begin(), e.end(), [](double v) { return v == 0.0; })) {
            throw InvalidArgument("coarsen: zero embedding");
        }
    }

    std::unordered_map<int, Live> live;
    int next_id = 0;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        if (!live.emplace(n.id, Live{n, g.embeddings[i], {}, true}).second) {
            throw InvalidArgument("coarsen: duplicate node id " + std::to_string(n.id));
        }
        next_id = std::max(next_id, n.id + 1);
    }

    std::priority_queue<Candidate, std::vector<Candidate>, CandidateOrder> heap;
    for (auto [a, b] : g.edges) {
        if (a == b) continue;
        auto ia = live.find(a), ib = live.find(b);
        if (ia == live.end() || ib == live.end()) throw InvalidArgument("coarsen: edge references unknown node");
        ia->second.adjacent.insert(b);
        ib->second.adjacent.insert(a);
    }
    for (const auto& [id, state] : live) {
        for (int other : state.adjacent) {
            if (id < other) heap.push({similarity_or_zero(state.embedding, live.at(other).embedding), id, other});
        }
    }

    MergeTrace trace;
    while (!heap.empty()) {
        const Candidate top = heap.top();
        heap.pop();
        Live& la = live.at(top.a);
        Live& lb = live.at(top.b);
        if (!la.alive || !lb.alive) continue;
        if (!(top.similarity > tau)) break;

        const int id = next_id++;
        Live merged;
        merged.node.id = id;
        merged.node.pixel_count = la.node.pixel_count + lb.node.pixel_count;
        merged.node.bbox = BoundingBox::merged(la.node.bbox, lb.node.bbox);
        std::set_union(la.node.members.begin(), la.node.members.end(), lb.node.members.begin(),
                       lb.node.members.end(), std::back_inserter(merged.node.members));

        double wa = static_cast<double>(la.node.pixel_count);
        double wb = static_cast<double>(lb.node.pixel_count);
        if (wa + wb <= 0) wa = wb = 1.0;
        merged.embedding.resize(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            merged.embedding[k] = (wa * la.embedding[k] + wb * lb.embedding[k]) / (wa + wb);
        }

        for (int nb : la.adjacent) merged.adjacent.insert(nb);
        for (int nb : lb.adjacent) merged.adjacent.insert(nb);
        merged.adjacent.erase(top.a);
        merged.adjacent.erase(top.b);
        la.alive = false;
        lb.alive = false;
        la.adjacent.clear();
        lb.adjacent.clear();

        for (int nb : merged.adjacent) {
            Live& ln = live.at(nb);
            ln.adjacent.erase(top.a);
            ln.adjacent.erase(top.b);
            ln.adjacent.insert(id);
            heap.push({similarity_or_zero(merged.embedding, ln.embedding), std::min(id, nb), std::max(id, nb)});
        }
        trace.push_back({top.a, top.b, top.similarity, id});
        live.emplace(id, std::move(merged));
    }

    CoarsenResult out;
    std::vector<int> ids;
    for (const auto& [id, state] : live) {
        if (state.alive) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    for (int id : ids) {
        const Live& s = live.at(id);
        out.graph.nodes.push_back(s.node);
        out.graph.embeddings.push_back(s.embedding);
        for (int nb : s.adjacent) {
            if (id < nb) out.graph.edges.emplace_back(id, nb);
        }
    }
    std::sort(out.graph.edges.begin(), out.graph.edges.end());
    out.trace = std::move(trace);
    return out;
}

superpixel::LabelMap flatten_labels(const superpixel::LabelMap& original, const MergeTrace& trace) {
    int max_label = original.region_count - 1;
    for (int l : original.labels) max_label = std::max(max_label, l);

    // Forwarding pointers: parent[id] is the node that absorbed `id`.
    std::unordered_map<int, int> parent;
    for (int id = 0; id <= max_label; ++id) parent[id] = id;
    for (const auto& step : trace) {
        for (int id : {step.a, step.b}) {
            auto it = parent.find(id);
            if (it == parent.end()) throw CorruptTrace("flatten_labels: unknown node id " + std::to_string(id));
            if (it->second != id) throw CorruptTrace("flatten_labels: node " + std::to_string(id) + " merged twice");
        }
        if (step.a == step.b) throw CorruptTrace("flatten_labels: self merge of " + std::to_string(step.a));
        if (parent.count(step.merged_id)) {
            throw CorruptTrace("flatten_labels: merged id " + std::to_string(step.merged_id) + " reused");
        }
        parent[step.merged_id] = step.merged_id;
        parent[step.a] = step.merged_id;
        parent[step.b] = step.merged_id;
    }

    auto root = [&](int id) {
        int r = id;
        while (parent.at(r) != r) r = parent.at(r);
        while (parent.at(id) != r) {
            const int next = parent.at(id);
            parent[id] = r;
            id = next;
        }
        return r;
    };

    superpixel::LabelMap out = original;
    std::vector<int> final_id(static_cast<std::size_t>(max_label + 1));
    for (int id = 0; id <= max_label; ++id) final_id[id] = root(id);
    int max_out = -1;
    for (auto& l : out.labels) {
        if (l == superpixel::kBackground) continue;
        l = final_id[l];
        max_out = std::max(max_out, l);
    }
    out.region_count = max_out + 1;
    return out;
}

std::vector<std::vector<std::size_t>> pixels_by_label(const superpixel::LabelMap& labels) {
    int max_label = -1;
    for (int l : labels.labels) max_label = std::max(max_label, l);
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        if (labels.labels[i] >= 0) out[labels.labels[i]].push_back(i);
    }
    return out;
}

namespace {

constexpr int kHistBins = 8;
constexpr int kGlcmLevels = 8;

int hist_bin(double v, double lo, double hi) {
    const int b = static_cast<int>(std::floor((v - lo) / (hi - lo) * kHistBins));
    return std::clamp(b, 0, kHistBins - 1);
}

// Contrast, correlation and energy of the symmetric co-occurrence matrix of
// one offset, mapped to [0, 1]. Offsets with no in-region pairs, and
// constant regions, give (0, 1, 1).
std::array<double, 3> glcm_summary(const std::vector<int>& level_at, const std::vector<std::size_t>& pixels,
                                   int width, int height, int dx, int dy) {
    double p[kGlcmLevels][kGlcmLevels] = {};
    double total = 0;
    for (std::size_t idx : pixels) {
        const int x = static_cast<int>(idx % width), y = static_cast<int>(idx / width);
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= width || ny >= height) continue;
        const int j = level_at[static_cast<std::size_t>(ny) * width + nx];
        if (j < 0) continue;
        const int i = level_at[idx];
        p[i][j] += 1;
        p[j][i] += 1;
        total += 2;
    }
    if (total == 0) return {0.0, 1.0, 1.0};
    double mu = 0, contrast = 0, energy = 0;
    for (int i = 0; i < kGlcmLevels; ++i) {
        for (int j = 0; j < kGlcmLevels; ++j) {
            p[i][j] /= total;
            mu += i * p[i][j];
            contrast += (i - j) * (i - j) * p[i][j];
            energy += p[i][j] * p[i][j];
        }
    }
    double var = 0, cov = 0;
    for (int i = 0; i < kGlcmLevels; ++i) {
        for (int j = 0; j < kGlcmLevels; ++j) {
            var += (i - mu) * (i - mu) * p[i][j];
            cov += (i - mu) * (j - mu) * p[i][j];
        }
    }
    const double corr = var > 1e-15 ? cov / var : 1.0;
    const double max_contrast = (kGlcmLevels - 1) * (kGlcmLevels - 1);
    return {contrast / max_contrast, (std::clamp(corr, -1.0, 1.0) + 1.0) / 2.0, energy};
}

} // namespace

std::vector<std::vector<double>> builtin_embeddings(const raster::RgbImage& img, const superpixel::LabelMap& labels) {
    if (labels.width != img.width() || labels.height != img.height()) {
        throw InvalidArgument("builtin_embeddings: label map and image dimensions differ");
    }
    const int w = img.width(), h = img.height();
    const auto lab = raster::convert_color(img, raster::ColorSpace::Lab);
    const auto regions = pixels_by_label(labels);

    std::vector<int> level_at(labels.labels.size(), -1);
    for (std::size_t i = 0; i < level_at.size(); ++i) {
        if (labels.labels[i] < 0) continue;
        const auto* px = img.data().data() + 3 * i;
        const double gray = raster::rgb_to_gray(px[0], px[1], px[2]);
        level_at[i] = std::clamp(static_cast<int>(gray / 256.0 * kGlcmLevels), 0, kGlcmLevels - 1);
    }

    // Restrict co-occurrence to pixels of the same region.
    std::vector<int> region_level(level_at.size(), -1);
    const int offsets[4][2] = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};
    const double ranges[3][2] = {{0.0, 100.0}, {-128.0, 128.0}, {-128.0, 128.0}};

    std::vector<std::vector<double>> out(regions.size());
    for (std::size_t r = 0; r < regions.size(); ++r) {
        const auto& pixels = regions[r];
        std::vector<double> v(kBuiltinEmbeddingDim, 0.0);
        if (pixels.empty()) {
            out[r] = std::move(v);
            continue;
        }
        const double inv = 1.0 / static_cast<double>(pixels.size());
        for (std::size_t idx : pixels) {
            for (int c = 0; c < 3; ++c) {
                v[c * kHistBins + hist_bin(lab[c].values[idx], ranges[c][0], ranges[c][1])] += inv;
            }
            region_level[idx] = level_at[idx];
        }
        int k = 3 * kHistBins;
        for (const auto& off : offsets) {
            for (int dist : {1, 2}) {
                const auto s = glcm_summary(region_level, pixels, w, h, off[0] * dist, off[1] * dist);
                v[k++] = s[0];
                v[k++] = s[1];
                v[k++] = s[2];
            }
        }
        for (std::size_t idx : pixels) region_level[idx] = -1;

        double norm = 0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        out[r] = std::move(v);
    }
    return out;
}

namespace {
constexpr std::uint32_t kEmbeddingVersion = 1;
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
    binio::Writer w;
    w.magic("TGEM");
    w.u32(kEmbeddingVersion);
    w.u32(static_cast<std::uint32_t>(table.rows.size()));
    w.u32(static_cast<std::uint32_t>(table.dim));
    for (const auto& [id, row] : table.rows) {
        if (static_cast<int>(row.size()) != table.dim) throw InvalidArgument("write_embeddings: row dimension mismatch");
        if (id < 0) throw InvalidArgument("write_embeddings: negative region id");
        w.u32(static_cast<std::uint32_t>(id));
        for (double x : row) w.f32(static_cast<float>(x));
    }
    w.save(path);
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
    auto r = binio::Reader::load(path);
    r.expect_magic("TGEM");
    if (r.u32() != kEmbeddingVersion) throw IoError(path.string() + ": unsupported embedding version");
    const std::uint32_t count = r.u32();
    EmbeddingTable table;
    table.dim = static_cast<int>(r.u32());
    for (std::uint32_t i = 0; i < count; ++i) {
        const int id = static_cast<int>(r.u32());
        std::vector<double> row(table.dim);
        for (auto& x : row) x = r.f32();
        if (!table.rows.emplace(id, std::move(row)).second) {
            throw IoError(path.string() + ": duplicate region id " + std::to_string(id));
        }
    }
    if (!r.at_end()) throw IoError(path.string() + ": trailing bytes");
    return table;
}

} // namespace tissuegraph::coarsen
