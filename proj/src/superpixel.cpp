#include "tissuegraph/superpixel.hpp"

#include "tissuegraph/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace tissuegraph::superpixel {

int target_region_count(double tissue_area, double seg_mag, double ref_mag, double target_side) {
    if (!(tissue_area > 0) || !(seg_mag > 0) || !(ref_mag > 0) || !(target_side > 0)) {
        throw InvalidArgument("target_region_count: all arguments must be positive");
    }
    const double scale = ref_mag / seg_mag;
    const double k = tissue_area * scale * scale / (target_side * target_side);
    return static_cast<int>(std::max<long long>(1, std::llround(k)));
}

namespace {

struct Center {
    double c[3];
    double x;
    double y;
};

using Planes = std::vector<raster::Plane>;

Planes color_planes(const raster::RgbImage& img, ColorDistance distance) {
    if (distance == ColorDistance::Lab) return raster::convert_color(img, raster::ColorSpace::Lab);
    Planes planes(3, raster::Plane(img.width(), img.height()));
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < 3; ++c) planes[c].at(x, y) = img.at(x, y, c);
        }
    }
    return planes;
}

double color_dist2(const Planes& planes, std::size_t idx, const Center& ctr) {
    double d = 0;
    for (int c = 0; c < 3; ++c) {
        const double diff = planes[c].values[idx] - ctr.c[c];
        d += diff * diff;
    }
    return d;
}

double gradient(const Planes& planes, int x, int y) {
    const int w = planes[0].width, h = planes[0].height;
    const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
    const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
    double g = 0;
    for (const auto& p : planes) {
        const double gx = p.at(xr, y) - p.at(xl, y);
        const double gy = p.at(x, yd) - p.at(x, yu);
        g += gx * gx + gy * gy;
    }
    return g;
}

// One seed per grid cell over the mask's bounding box. Cells at least a
// quarter covered by tissue get a seed at the masked pixel nearest the cell
// centre; if no cell qualifies, any cell with tissue does.
std::vector<std::pair<int, int>> grid_seeds(const tissue::TissueMask& mask, double spacing) {
    int bx0 = mask.width, by0 = mask.height, bx1 = 0, by1 = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            bx0 = std::min(bx0, x);
            by0 = std::min(by0, y);
            bx1 = std::max(bx1, x + 1);
            by1 = std::max(by1, y + 1);
        }
    }
    const int bw = bx1 - bx0, bh = by1 - by0;
    const int nx = std::max(1, static_cast<int>(std::lround(bw / spacing)));
    const int ny = std::max(1, static_cast<int>(std::lround(bh / spacing)));
    const double cw = static_cast<double>(bw) / nx;
    const double ch = static_cast<double>(bh) / ny;

    struct Cell {
        std::pair<int, int> seed;
        long covered;
        long area;
    };
    std::vector<Cell> cells;
    for (int j = 0; j < ny; ++j) {
        const int y0 = by0 + static_cast<int>(std::floor(j * ch));
        const int y1 = j + 1 == ny ? by1 : by0 + static_cast<int>(std::floor((j + 1) * ch));
        for (int i = 0; i < nx; ++i) {
            const int x0 = bx0 + static_cast<int>(std::floor(i * cw));
            const int x1 = i + 1 == nx ? bx1 : bx0 + static_cast<int>(std::floor((i + 1) * cw));
            const double mx = 0.5 * (x0 + x1 - 1), my = 0.5 * (y0 + y1 - 1);
            long covered = 0;
            double best = std::numeric_limits<double>::infinity();
            std::pair<int, int> seed{-1, -1};
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    if (!mask.at(x, y)) continue;
                    ++covered;
                    const double d = (x - mx) * (x - mx) + (y - my) * (y - my);
                    if (d < best) {
                        best = d;
                        seed = {x, y};
                    }
                }
            }
            if (covered > 0) {
                cells.push_back({seed, covered, static_cast<long>(x1 - x0) * (y1 - y0)});
            }
        }
    }

    std::vector<std::pair<int, int>> seeds;
    for (const auto& c : cells) {
        if (4 * c.covered >= c.area) seeds.push_back(c.seed);
    }
    if (seeds.empty()) {
        for (const auto& c : cells) seeds.push_back(c.seed);
    }
    return seeds;
}

// Splits every label into 4-connected components, keeps the largest
// component of each label when it reaches `min_size`, and merges the rest
// into the largest adjacent kept region. Components with no kept neighbour
// at all become regions of their own. Output is relabelled 0..R-1 in raster
// order.
void enforce_connectivity(LabelMap& out, double min_size) {
    const int w = out.width, h = out.height;
    const std::size_t n = out.labels.size();
    std::vector<int> comp(n, -1);
    std::vector<int> comp_label;
    std::vector<long> comp_size;
    std::vector<std::size_t> stack;

    for (std::size_t start = 0; start < n; ++start) {
        if (out.labels[start] == kBackground || comp[start] >= 0) continue;
        const int c = static_cast<int>(comp_size.size());
        const int label = out.labels[start];
        long size = 0;
        stack.assign(1, start);
        comp[start] = c;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++size;
            const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
            const std::size_t nb[4] = {p - 1, p + 1, p - w, p + w};
            const bool ok[4] = {x > 0, x + 1 < w, y > 0, y + 1 < h};
            for (int k = 0; k < 4; ++k) {
                if (!ok[k]) continue;
                const std::size_t q = nb[k];
                if (comp[q] < 0 && out.labels[q] == label) {
                    comp[q] = c;
                    stack.push_back(q);
                }
            }
        }
        comp_label.push_back(label);
        comp_size.push_back(size);
    }

    const int nc = static_cast<int>(comp_size.size());
    int max_label = -1;
    for (int l : comp_label) max_label = std::max(max_label, l);
    std::vector<int> largest(static_cast<std::size_t>(max_label + 1), -1);
    for (int c = 0; c < nc; ++c) {
        int& best = largest[comp_label[c]];
        if (best < 0 || comp_size[c] > comp_size[best]) best = c;
    }

    std::vector<std::set<int>> adjacent(nc);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int a = comp[static_cast<std::size_t>(y) * w + x];
            if (a < 0) continue;
            if (x + 1 < w) {
                const int b = comp[static_cast<std::size_t>(y) * w + x + 1];
                if (b >= 0 && b != a) { adjacent[a].insert(b); adjacent[b].insert(a); }
            }
            if (y + 1 < h) {
                const int b = comp[static_cast<std::size_t>(y + 1) * w + x];
                if (b >= 0 && b != a) { adjacent[a].insert(b); adjacent[b].insert(a); }
            }
        }
    }

    std::vector<int> region(nc, -1);
    std::vector<long> region_area(nc, 0);
    int pending = 0;
    for (int c = 0; c < nc; ++c) {
        if (largest[comp_label[c]] == c && comp_size[c] >= min_size) {
            region[c] = c;
            region_area[c] = comp_size[c];
        } else {
            ++pending;
        }
    }
    while (pending > 0) {
        bool progress = false;
        for (int c = 0; c < nc; ++c) {
            if (region[c] >= 0) continue;
            int target = -1;
            for (int nb : adjacent[c]) {
                const int r = region[nb];
                if (r < 0) continue;
                if (target < 0 || region_area[r] > region_area[target] ||
                    (region_area[r] == region_area[target] && r < target)) {
                    target = r;
                }
            }
            if (target >= 0) {
                region[c] = target;
                region_area[target] += comp_size[c];
                --pending;
                progress = true;
            }
        }
        if (!progress) {
            for (int c = 0; c < nc; ++c) {
                if (region[c] < 0) {
                    region[c] = c;
                    region_area[c] = comp_size[c];
                    --pending;
                    break;
                }
            }
        }
    }

    std::vector<int> relabel(nc, -1);
    int next = 0;
    for (std::size_t p = 0; p < n; ++p) {
        if (comp[p] < 0) continue;
        int& r = relabel[region[comp[p]]];
        if (r < 0) r = next++;
        out.labels[p] = r;
    }
    out.region_count = next;
}

} // namespace

LabelMap slic(const raster::RgbImage& img, const tissue::TissueMask& mask, int region_count,
              const SlicParams& params) {
    if (mask.width != img.width() || mask.height != img.height()) {
        throw InvalidArgument("slic: mask and image dimensions differ");
    }
    if (region_count < 1) throw InvalidArgument("slic: region count must be >= 1");
    if (params.iterations < 0) throw InvalidArgument("slic: iterations must be >= 0");
    if (!(params.compactness >= 0)) throw InvalidArgument("slic: compactness must be >= 0");
    const std::size_t area = mask.area();
    if (area == 0) throw InvalidArgument("slic: mask is empty");
    if (static_cast<std::size_t>(region_count) > area) {
        throw InvalidArgument("slic: region count exceeds masked pixel count");
    }

    const int w = img.width(), h = img.height();
    const double spacing = std::sqrt(static_cast<double>(area) / region_count);
    const double spatial_weight = (params.compactness / spacing) * (params.compactness / spacing);
    const Planes planes = color_planes(img, params.distance);

    std::vector<Center> centers;
    for (auto [sx, sy] : grid_seeds(mask, spacing)) {
        int bx = sx, by = sy;
        double best = gradient(planes, sx, sy);
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int x = sx + dx, y = sy + dy;
                if (x < 0 || y < 0 || x >= w || y >= h || !mask.at(x, y)) continue;
                const double g = gradient(planes, x, y);
                if (g < best) {
                    best = g;
                    bx = x;
                    by = y;
                }
            }
        }
        const std::size_t idx = static_cast<std::size_t>(by) * w + bx;
        centers.push_back({{planes[0].values[idx], planes[1].values[idx], planes[2].values[idx]},
                           static_cast<double>(bx), static_cast<double>(by)});
    }

    const std::size_t n = static_cast<std::size_t>(w) * h;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(n, kInf);
    std::vector<int> assign(n, -1);

    for (int iter = 0; iter < params.iterations; ++iter) {
        std::fill(dist.begin(), dist.end(), kInf);
        std::fill(assign.begin(), assign.end(), -1);
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const Center& ctr = centers[k];
            const int x0 = std::max(0, static_cast<int>(std::ceil(ctr.x - spacing)));
            const int x1 = std::min(w - 1, static_cast<int>(std::floor(ctr.x + spacing)));
            const int y0 = std::max(0, static_cast<int>(std::ceil(ctr.y - spacing)));
            const int y1 = std::min(h - 1, static_cast<int>(std::floor(ctr.y + spacing)));
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const std::size_t idx = static_cast<std::size_t>(y) * w + x;
                    if (!mask.bits[idx]) continue;
                    const double dxy = (x - ctr.x) * (x - ctr.x) + (y - ctr.y) * (y - ctr.y);
                    const double d = color_dist2(planes, idx, ctr) + spatial_weight * dxy;
                    if (d < dist[idx]) {
                        dist[idx] = d;
                        assign[idx] = static_cast<int>(k);
                    }
                }
            }
        }

        std::vector<std::array<double, 5>> sums(centers.size(), {0, 0, 0, 0, 0});
        std::vector<long> counts(centers.size(), 0);
        for (std::size_t idx = 0; idx < n; ++idx) {
            const int k = assign[idx];
            if (k < 0) continue;
            auto& s = sums[k];
            for (int c = 0; c < 3; ++c) s[c] += planes[c].values[idx];
            s[3] += static_cast<double>(idx % w);
            s[4] += static_cast<double>(idx / w);
            ++counts[k];
        }
        for (std::size_t k = 0; k < centers.size(); ++k) {
            if (counts[k] == 0) continue;
            const double inv = 1.0 / counts[k];
            for (int c = 0; c < 3; ++c) centers[k].c[c] = sums[k][c] * inv;
            centers[k].x = sums[k][3] * inv;
            centers[k].y = sums[k][4] * inv;
        }
    }

    // Tissue pixels outside every search window go to the nearest centre.
    for (std::size_t idx = 0; idx < n; ++idx) {
        if (!mask.bits[idx] || assign[idx] >= 0) continue;
        const double x = static_cast<double>(idx % w), y = static_cast<double>(idx / w);
        double best = kInf;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            const Center& ctr = centers[k];
            const double dxy = (x - ctr.x) * (x - ctr.x) + (y - ctr.y) * (y - ctr.y);
            const double d = color_dist2(planes, idx, ctr) + spatial_weight * dxy;
            if (d < best) {
                best = d;
                assign[idx] = static_cast<int>(k);
            }
        }
    }

    LabelMap out(w, h);
    for (std::size_t idx = 0; idx < n; ++idx) {
        if (mask.bits[idx]) out.labels[idx] = assign[idx];
    }
    enforce_connectivity(out, spacing * spacing / 16.0);
    return out;
}

RegionGraph build_rag(const LabelMap& labels) {
    const int w = labels.width, h = labels.height;
    if (labels.labels.size() != static_cast<std::size_t>(w) * h) {
        throw InvalidArgument("build_rag: label buffer does not match dimensions");
    }
    int count = labels.region_count;
    for (int l : labels.labels) {
        if (l < kBackground) throw InvalidArgument("build_rag: negative region label");
        count = std::max(count, l + 1);
    }

    RegionGraph g;
    g.nodes.resize(count);
    for (int i = 0; i < count; ++i) {
        g.nodes[i].id = i;
        g.nodes[i].members = {i};
    }
    std::set<std::pair<int, int>> edges;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int a = labels.at(x, y);
            if (a == kBackground) continue;
            ++g.nodes[a].pixel_count;
            g.nodes[a].bbox.extend(x, y);
            if (x + 1 < w) {
                const int b = labels.at(x + 1, y);
                if (b != kBackground && b != a) edges.emplace(std::min(a, b), std::max(a, b));
            }
            if (y + 1 < h) {
                const int b = labels.at(x, y + 1);
                if (b != kBackground && b != a) edges.emplace(std::min(a, b), std::max(a, b));
            }
        }
    }
    g.edges.assign(edges.begin(), edges.end());
    return g;
}

} // namespace tissuegraph::superpixel
