#pragma once

#include "fixtures.hpp"
#include "texture_oracle.hpp"

#include "tissuegraph/features.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace region_fixtures {

// Random region with a few holes; `palette` controls how many distinct values
// appear so that runs and zones get longer for small palettes.
inline tissuegraph::features::GrayRegion random_region(std::mt19937_64& rng, int w, int h, int palette, double hole_rate) {
    tissuegraph::features::GrayRegion r;
    r.width = w;
    r.height = h;
    std::vector<double> colours;
    for (int i = 0; i < palette; ++i) colours.push_back(fixtures::rand_range(rng, 0.0, 255.0));
    for (int i = 0; i < w * h; ++i) {
        r.values.push_back(colours[fixtures::rand_int(rng, 0, palette - 1)]);
        r.inside.push_back(fixtures::rand_unit(rng) < hole_rate ? 0 : 1);
    }
    r.inside[fixtures::rand_int(rng, 0, w * h - 1)] = 1;
    return r;
}

inline oracle::Region to_oracle(const tissuegraph::features::GrayRegion& r) {
    return {r.width, r.height, r.values, {r.inside.begin(), r.inside.end()}};
}

inline long double naive_pearson(const Eigen::MatrixXd& m, int a, int b) {
    const long double n = m.rows();
    long double ma = 0, mb = 0;
    for (int r = 0; r < m.rows(); ++r) { ma += m(r, a) / n; mb += m(r, b) / n; }
    long double sab = 0, saa = 0, sbb = 0;
    for (int r = 0; r < m.rows(); ++r) {
        sab += (m(r, a) - ma) * (m(r, b) - mb);
        saa += (m(r, a) - ma) * (m(r, a) - ma);
        sbb += (m(r, b) - mb) * (m(r, b) - mb);
    }
    if (saa == 0 || sbb == 0) return 0;
    return sab / std::sqrt(saa * sbb);
}


} // namespace region_fixtures
