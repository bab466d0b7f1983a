#include "tissuegraph/features.hpp"

#include "tissuegraph/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>

namespace tissuegraph::features {

std::size_t GrayRegion::pixel_count() const {
    return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InvalidArgument("percentile: empty input");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

constexpr double kEps = 2.220446049250313e-16;

double log2e(double p) { return std::log2(p + kEps); }

// Quantised level per grid cell, -1 outside the region.
struct LevelGrid {
    int width;
    int height;
    int levels;
    std::vector<int> q;

    int at(int r, int c) const {
        if (r < 0 || c < 0 || r >= height || c >= width) return -1;
        return q[static_cast<std::size_t>(r) * width + c];
    }
};

LevelGrid quantise_region(const GrayRegion& region, int levels) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < region.values.size(); ++i) {
        if (region.inside[i]) vals.push_back(region.values[i]);
    }
    const auto levels_in = raster::quantize(std::span<const double>(vals), levels);
    LevelGrid g{region.width, region.height, levels, std::vector<int>(region.values.size(), -1)};
    std::size_t k = 0;
    for (std::size_t i = 0; i < region.values.size(); ++i) {
        if (region.inside[i]) g.q[i] = levels_in[k++];
    }
    return g;
}

// Directions as (row, col) steps: 0, 45, 90 and 135 degrees.
constexpr int kDirections[4][2] = {{0, 1}, {1, 1}, {1, 0}, {1, -1}};

std::array<double, 18> first_order(const std::vector<double>& x, const LevelGrid& grid) {
    const double n = static_cast<double>(x.size());
    double sum = 0, sum_sq = 0;
    for (double v : x) {
        sum += v;
        sum_sq += v * v;
    }
    const auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
    // A constant region has exactly zero central moments.
    const double mean = *mn_it == *mx_it ? *mn_it : sum / n;
    double m2 = 0, m3 = 0, m4 = 0, mad = 0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += std::abs(d);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;

    const double p10 = percentile(x, 10), p25 = percentile(x, 25), p50 = percentile(x, 50);
    const double p75 = percentile(x, 75), p90 = percentile(x, 90);

    double robust_sum = 0, robust_n = 0;
    for (double v : x) {
        if (v >= p10 && v <= p90) {
            robust_sum += v;
            robust_n += 1;
        }
    }
    const double robust_mean = robust_sum / robust_n;
    double rmad = 0;
    for (double v : x) {
        if (v >= p10 && v <= p90) rmad += std::abs(v - robust_mean);
    }
    rmad /= robust_n;

    std::vector<double> hist(grid.levels, 0.0);
    for (int q : grid.q) {
        if (q >= 0) hist[q] += 1;
    }
    double entropy = 0, uniformity = 0;
    for (double c : hist) {
        if (c == 0) continue;
        const double p = c / n;
        entropy -= p * log2e(p);
        uniformity += p * p;
    }

    const double skew = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
    const double kurt = m2 > 0 ? m4 / (m2 * m2) : 0.0;
    return {p10, p90, sum_sq, entropy, p75 - p25, kurt, *mx_it, mad, mean, p50, *mn_it, *mx_it - *mn_it,
            rmad, std::sqrt(sum_sq / n), skew, sum_sq, uniformity, m2};
}

using Matrix = Eigen::MatrixXd;

std::array<double, 24> glcm_direction(const Matrix& counts) {
    const int ng = static_cast<int>(counts.rows());
    const Matrix p = counts / counts.sum();
    const Eigen::VectorXd px = p.rowwise().sum();
    const Eigen::VectorXd py = p.colwise().sum().transpose();

    double mux = 0, muy = 0;
    for (int i = 0; i < ng; ++i) {
        mux += (i + 1) * px(i);
        muy += (i + 1) * py(i);
    }
    double varx = 0, vary = 0;
    for (int i = 0; i < ng; ++i) {
        varx += (i + 1 - mux) * (i + 1 - mux) * px(i);
        vary += (i + 1 - muy) * (i + 1 - muy) * py(i);
    }

    std::vector<double> psum(2 * ng + 1, 0.0), pdiff(ng, 0.0);
    double autocorr = 0, prom = 0, shade = 0, tend = 0, contrast = 0, id = 0, idm = 0, idmn = 0, idn = 0;
    double energy = 0, hxy = 0, hxy1 = 0, hxy2 = 0, maxp = 0, sumsq = 0;
    const double ngd = ng;
    for (int a = 0; a < ng; ++a) {
        for (int b = 0; b < ng; ++b) {
            const double i = a + 1, j = b + 1, v = p(a, b);
            const double pxpy = px(a) * py(b);
            hxy2 -= pxpy * log2e(pxpy);
            if (v == 0) continue;
            psum[a + b + 2] += v;
            pdiff[std::abs(a - b)] += v;
            autocorr += i * j * v;
            const double s = i + j - mux - muy;
            prom += s * s * s * s * v;
            shade += s * s * s * v;
            tend += s * s * v;
            const double d = i - j;
            contrast += d * d * v;
            id += v / (1 + std::abs(d));
            idm += v / (1 + d * d);
            idmn += v / (1 + d * d / (ngd * ngd));
            idn += v / (1 + std::abs(d) / ngd);
            energy += v * v;
            hxy -= v * log2e(v);
            hxy1 -= v * log2e(pxpy);
            maxp = std::max(maxp, v);
            sumsq += (i - mux) * (i - mux) * v;
        }
    }

    double corr = 1.0;
    const double sigma = std::sqrt(varx) * std::sqrt(vary);
    if (sigma > 0) corr = (autocorr - mux * muy) / sigma;

    double diff_avg = 0, diff_ent = 0, inv_var = 0;
    for (int k = 0; k < ng; ++k) {
        diff_avg += k * pdiff[k];
        if (pdiff[k] > 0) diff_ent -= pdiff[k] * log2e(pdiff[k]);
        if (k > 0) inv_var += pdiff[k] / (static_cast<double>(k) * k);
    }
    double diff_var = 0;
    for (int k = 0; k < ng; ++k) diff_var += (k - diff_avg) * (k - diff_avg) * pdiff[k];

    double sum_avg = 0, sum_ent = 0;
    for (int k = 2; k <= 2 * ng; ++k) {
        sum_avg += k * psum[k];
        if (psum[k] > 0) sum_ent -= psum[k] * log2e(psum[k]);
    }

    double hx = 0, hy = 0;
    for (int i = 0; i < ng; ++i) {
        if (px(i) > 0) hx -= px(i) * log2e(px(i));
        if (py(i) > 0) hy -= py(i) * log2e(py(i));
    }
    const double hmax = std::max(hx, hy);
    const double imc1 = hmax > 0 ? (hxy - hxy1) / hmax : 0.0;
    const double imc2 = hxy > hxy2 ? 0.0 : std::sqrt(1.0 - std::exp(-2.0 * (hxy2 - hxy)));

    // MCC: Q = D^-1 P D^-1 P^T is similar to B^2 with B = D^-1/2 P D^-1/2
    // over the levels present in the matrix (P is symmetric here).
    std::vector<int> present;
    for (int i = 0; i < ng; ++i) {
        if (px(i) > 0) present.push_back(i);
    }
    double mcc = 1.0;
    if (present.size() > 1) {
        const int m = static_cast<int>(present.size());
        Matrix b(m, m);
        for (int r = 0; r < m; ++r) {
            for (int c = 0; c < m; ++c) {
                b(r, c) = p(present[r], present[c]) / std::sqrt(px(present[r]) * py(present[c]));
            }
        }
        Eigen::SelfAdjointEigenSolver<Matrix> solver(b, Eigen::EigenvaluesOnly);
        std::vector<double> sq(m);
        for (int k = 0; k < m; ++k) sq[k] = solver.eigenvalues()(k) * solver.eigenvalues()(k);
        std::sort(sq.begin(), sq.end(), std::greater<>());
        mcc = std::sqrt(std::max(sq[1], 0.0));
    }

    return {autocorr, prom, shade, tend, contrast, corr, diff_avg, diff_ent, diff_var, id, idm, idmn, idn,
            imc1, imc2, inv_var, mux, energy, hxy, mcc, maxp, sum_avg, sum_ent, sumsq};
}

std::array<double, 24> glcm_features(const LevelGrid& g) {
    std::array<double, 24> total{};
    int used = 0;
    for (const auto& dir : kDirections) {
        Matrix counts = Matrix::Zero(g.levels, g.levels);
        double pairs = 0;
        for (int r = 0; r < g.height; ++r) {
            for (int c = 0; c < g.width; ++c) {
                const int a = g.at(r, c);
                const int b = g.at(r + dir[0], c + dir[1]);
                if (a < 0 || b < 0) continue;
                counts(a, b) += 1;
                counts(b, a) += 1;
                pairs += 1;
            }
        }
        if (pairs == 0) continue;
        const auto f = glcm_direction(counts);
        for (int k = 0; k < 24; ++k) total[k] += f[k];
        ++used;
    }
    if (used > 0) {
        for (double& v : total) v /= used;
    }
    return total;
}

// Shared emphasis statistics over a (gray level x size) count matrix, used
// by the run-length, size-zone and dependence families.
struct SizeMatrixStats {
    double gln = 0, glnn = 0, glv = 0, high = 0, large = 0, large_high = 0, large_low = 0, low = 0;
    double entropy = 0, sn = 0, snn = 0, sizevar = 0, small = 0, small_high = 0, small_low = 0, total = 0;
};

SizeMatrixStats size_matrix_stats(const Matrix& counts) {
    SizeMatrixStats s;
    const double n = counts.sum();
    s.total = n;
    const Eigen::VectorXd by_level = counts.rowwise().sum();
    const Eigen::VectorXd by_size = counts.colwise().sum().transpose();
    for (int i = 0; i < by_level.size(); ++i) s.gln += by_level(i) * by_level(i);
    for (int j = 0; j < by_size.size(); ++j) s.sn += by_size(j) * by_size(j);
    s.glnn = s.gln / (n * n);
    s.gln /= n;
    s.snn = s.sn / (n * n);
    s.sn /= n;

    double mu_i = 0, mu_j = 0;
    for (int a = 0; a < counts.rows(); ++a) {
        for (int b = 0; b < counts.cols(); ++b) {
            const double v = counts(a, b);
            if (v == 0) continue;
            const double p = v / n, i = a + 1, j = b + 1;
            mu_i += p * i;
            mu_j += p * j;
            s.high += p * i * i;
            s.large += p * j * j;
            s.large_high += p * i * i * j * j;
            s.large_low += p * j * j / (i * i);
            s.low += p / (i * i);
            s.entropy -= p * log2e(p);
            s.small += p / (j * j);
            s.small_high += p * i * i / (j * j);
            s.small_low += p / (i * i * j * j);
        }
    }
    for (int a = 0; a < counts.rows(); ++a) {
        for (int b = 0; b < counts.cols(); ++b) {
            const double v = counts(a, b);
            if (v == 0) continue;
            const double p = v / n;
            s.glv += p * (a + 1 - mu_i) * (a + 1 - mu_i);
            s.sizevar += p * (b + 1 - mu_j) * (b + 1 - mu_j);
        }
    }
    return s;
}

std::array<double, 16> glrlm_features(const LevelGrid& g, double pixel_count) {
    std::array<double, 16> total{};
    const int max_run = std::max(g.width, g.height);
    for (const auto& dir : kDirections) {
        Matrix counts = Matrix::Zero(g.levels, max_run);
        for (int r = 0; r < g.height; ++r) {
            for (int c = 0; c < g.width; ++c) {
                const int q = g.at(r, c);
                if (q < 0) continue;
                // Only start a run at its first pixel along the direction.
                if (g.at(r - dir[0], c - dir[1]) == q) continue;
                int len = 1;
                while (g.at(r + len * dir[0], c + len * dir[1]) == q) ++len;
                counts(q, len - 1) += 1;
            }
        }
        const auto s = size_matrix_stats(counts);
        const std::array<double, 16> f = {s.gln, s.glnn, s.glv, s.high, s.large, s.large_high, s.large_low, s.low,
                                          s.entropy, s.sn, s.snn, s.total / pixel_count, s.sizevar, s.small,
                                          s.small_high, s.small_low};
        for (int k = 0; k < 16; ++k) total[k] += f[k];
    }
    for (double& v : total) v /= 4.0;
    return total;
}

std::array<double, 16> glszm_features(const LevelGrid& g, double pixel_count) {
    std::vector<std::uint8_t> seen(g.q.size(), 0);
    std::vector<std::pair<int, int>> zones;
    std::vector<std::size_t> stack;
    int max_size = 1;
    for (std::size_t start = 0; start < g.q.size(); ++start) {
        if (g.q[start] < 0 || seen[start]) continue;
        const int q = g.q[start];
        int size = 0;
        stack.assign(1, start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++size;
            const int r = static_cast<int>(p / g.width), c = static_cast<int>(p % g.width);
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (g.at(r + dr, c + dc) != q) continue;
                    const std::size_t nb = static_cast<std::size_t>(r + dr) * g.width + (c + dc);
                    if (!seen[nb]) {
                        seen[nb] = 1;
                        stack.push_back(nb);
                    }
                }
            }
        }
        zones.emplace_back(q, size);
        max_size = std::max(max_size, size);
    }
    Matrix counts = Matrix::Zero(g.levels, max_size);
    for (auto [q, size] : zones) counts(q, size - 1) += 1;
    const auto s = size_matrix_stats(counts);
    return {s.gln, s.glnn, s.glv, s.high, s.large, s.large_high, s.large_low, s.low,
            s.sn, s.snn, s.small, s.small_high, s.small_low, s.entropy, s.total / pixel_count, s.sizevar};
}

std::array<double, 14> gldm_features(const LevelGrid& g) {
    Matrix counts = Matrix::Zero(g.levels, 9);
    for (int r = 0; r < g.height; ++r) {
        for (int c = 0; c < g.width; ++c) {
            const int q = g.at(r, c);
            if (q < 0) continue;
            int dep = 1;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if ((dr != 0 || dc != 0) && g.at(r + dr, c + dc) == q) ++dep;
                }
            }
            counts(q, dep - 1) += 1;
        }
    }
    const auto s = size_matrix_stats(counts);
    return {s.entropy, s.sn, s.snn, s.sizevar, s.gln, s.glv, s.high, s.large, s.large_high, s.large_low,
            s.low, s.small, s.small_high, s.small_low};
}

std::array<double, 5> ngtdm_features(const LevelGrid& g) {
    std::vector<double> n(g.levels, 0.0), s(g.levels, 0.0);
    double nvp = 0;
    for (int r = 0; r < g.height; ++r) {
        for (int c = 0; c < g.width; ++c) {
            const int q = g.at(r, c);
            if (q < 0) continue;
            double sum = 0, count = 0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int nb = g.at(r + dr, c + dc);
                    if (nb < 0) continue;
                    sum += nb + 1;
                    count += 1;
                }
            }
            if (count == 0) continue;
            n[q] += 1;
            s[q] += std::abs((q + 1) - sum / count);
            nvp += 1;
        }
    }
    if (nvp == 0) return {0.0, 1e6, 0.0, 0.0, 0.0};

    std::vector<int> present;
    std::vector<double> p(g.levels, 0.0);
    for (int i = 0; i < g.levels; ++i) {
        p[i] = n[i] / nvp;
        if (p[i] > 0) present.push_back(i);
    }
    const double ngp = static_cast<double>(present.size());
    double ps = 0, s_total = 0;
    for (int i : present) {
        ps += p[i] * s[i];
        s_total += s[i];
    }

    double busy_den = 0, complexity = 0, contrast_sum = 0, strength_num = 0;
    for (int a : present) {
        for (int b : present) {
            const double i = a + 1, j = b + 1;
            busy_den += std::abs(i * p[a] - j * p[b]);
            complexity += std::abs(i - j) * (p[a] * s[a] + p[b] * s[b]) / (p[a] + p[b]);
            contrast_sum += p[a] * p[b] * (i - j) * (i - j);
            strength_num += (p[a] + p[b]) * (i - j) * (i - j);
        }
    }
    const double coarseness = ps == 0 ? 1e6 : 1.0 / ps;
    const double contrast = ngp > 1 ? contrast_sum / (ngp * (ngp - 1)) * s_total / nvp : 0.0;
    const double busyness = busy_den == 0 ? 0.0 : ps / busy_den;
    const double strength = s_total == 0 ? 0.0 : strength_num / s_total;
    return {busyness, coarseness, complexity / nvp, contrast, strength};
}

} // namespace

std::vector<double> extract_texture(const GrayRegion& region, int levels) {
    if (region.values.size() != static_cast<std::size_t>(region.width) * region.height ||
        region.inside.size() != region.values.size()) {
        throw InvalidArgument("extract_texture: region buffers do not match dimensions");
    }
    std::vector<double> x;
    for (std::size_t i = 0; i < region.values.size(); ++i) {
        if (region.inside[i]) x.push_back(region.values[i]);
    }
    if (x.empty()) throw InvalidArgument("extract_texture: empty region");
    const LevelGrid grid = quantise_region(region, levels);
    const double np = static_cast<double>(x.size());

    std::vector<double> out;
    out.reserve(kTextureCount);
    auto append = [&out](const auto& arr) { out.insert(out.end(), arr.begin(), arr.end()); };
    append(first_order(x, grid));
    append(glcm_features(grid));
    append(glrlm_features(grid, np));
    append(glszm_features(grid, np));
    append(gldm_features(grid));
    append(ngtdm_features(grid));
    return out;
}

std::vector<double> extract_lbp(const GrayRegion& region) {
    std::vector<double> hist(kLbpCount, 0.0);
    const int w = region.width, h = region.height;
    // Neighbours in circular order starting east.
    const int ring[8][2] = {{0, 1}, {-1, 1}, {-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}};
    double total = 0;
    for (int r = 1; r + 1 < h; ++r) {
        for (int c = 1; c + 1 < w; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * w + c;
            if (!region.inside[idx]) continue;
            bool complete = true;
            int bits[8];
            for (int k = 0; k < 8; ++k) {
                const std::size_t nb = static_cast<std::size_t>(r + ring[k][0]) * w + (c + ring[k][1]);
                if (!region.inside[nb]) {
                    complete = false;
                    break;
                }
                bits[k] = region.values[nb] >= region.values[idx] ? 1 : 0;
            }
            if (!complete) continue;
            int transitions = 0, ones = 0;
            for (int k = 0; k < 8; ++k) {
                transitions += bits[k] != bits[(k + 1) % 8];
                ones += bits[k];
            }
            hist[transitions <= 2 ? ones : 9] += 1;
            total += 1;
        }
    }
    if (total > 0) {
        for (double& v : hist) v /= total;
    }
    return hist;
}

} // namespace tissuegraph::features
