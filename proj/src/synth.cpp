#include "tissuegraph/synth.hpp"

#include "tissuegraph/error.hpp"
#include "tissuegraph/features.hpp"
#include "tissuegraph/image_io.hpp"
#include "tissuegraph/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace tissuegraph::synth {

namespace fs = std::filesystem;

namespace {

std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Slide {
    raster::RgbImage image;
    features::NucleiMap nuclei;
};

Slide render(int width, int height, int stage, rnd::Engine& rng) {
    Slide s{raster::RgbImage(width, height), {}};
    s.nuclei.width = width;
    s.nuclei.height = height;
    s.nuclei.instance.assign(static_cast<std::size_t>(width) * height, 0);

    const double cx = width / 2.0 + rnd::uniform(rng, -0.06, 0.06) * width;
    const double cy = height / 2.0 + rnd::uniform(rng, -0.06, 0.06) * height;
    const double rx = rnd::uniform(rng, 0.32, 0.42) * width;
    const double ry = rnd::uniform(rng, 0.32, 0.42) * height;
    auto inside = [&](double x, double y) {
        const double u = (x - cx) / rx, v = (y - cy) / ry;
        return u * u + v * v <= 1.0;
    };

    const double period = stage == 0 ? rnd::uniform(rng, 14.0, 20.0) : rnd::uniform(rng, 3.5, 5.5);
    const double angle = rnd::uniform(rng, 0.0, std::numbers::pi);
    const double phase = rnd::uniform(rng, 0.0, 2 * std::numbers::pi);
    const double kx = std::cos(angle) * 2 * std::numbers::pi / period;
    const double ky = std::sin(angle) * 2 * std::numbers::pi / period;

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double noise = rnd::uniform(rng, -6.0, 6.0);
            if (inside(x + 0.5, y + 0.5)) {
                const double w = std::sin(kx * x + ky * y + phase);
                s.image.set_pixel(x, y, {clamp_byte(212 + 28 * w + noise), clamp_byte(118 + 34 * w + noise),
                                         clamp_byte(172 + 22 * w + noise)});
            } else {
                const auto g = clamp_byte(242 + noise);
                s.image.set_pixel(x, y, {g, g, g});
            }
        }
    }

    const int lo = stage == 0 ? 3 : 14;
    const int hi = stage == 0 ? 6 : 20;
    const int count = lo + static_cast<int>(rnd::below(rng, static_cast<std::uint64_t>(hi - lo + 1)));
    for (int k = 1; k <= count; ++k) {
        double nx = 0, ny = 0;
        do {
            nx = rnd::uniform(rng, 0, width);
            ny = rnd::uniform(rng, 0, height);
        } while (!inside(nx, ny));
        const double radius = rnd::uniform(rng, 1.8, 3.0);
        const int type = 1 + static_cast<int>(rnd::below(rng, 5));
        bool placed = false;
        for (int y = std::max(0, static_cast<int>(ny - radius)); y <= std::min(height - 1, static_cast<int>(ny + radius)); ++y) {
            for (int x = std::max(0, static_cast<int>(nx - radius)); x <= std::min(width - 1, static_cast<int>(nx + radius)); ++x) {
                const double dx = x + 0.5 - nx, dy = y + 0.5 - ny;
                if (dx * dx + dy * dy > radius * radius || !inside(x + 0.5, y + 0.5)) continue;
                const double noise = rnd::uniform(rng, -8.0, 8.0);
                s.image.set_pixel(x, y, {clamp_byte(78 + noise), clamp_byte(40 + noise), clamp_byte(128 + noise)});
                s.nuclei.instance[static_cast<std::size_t>(y) * width + x] = static_cast<std::uint32_t>(k);
                placed = true;
            }
        }
        if (placed) s.nuclei.types[static_cast<std::uint32_t>(k)] = type;
    }
    // Drop instances fully painted over by later nuclei.
    std::vector<bool> present(static_cast<std::size_t>(count) + 1, false);
    for (auto id : s.nuclei.instance) present[id] = true;
    for (auto it = s.nuclei.types.begin(); it != s.nuclei.types.end();) {
        it = present[it->first] ? std::next(it) : s.nuclei.types.erase(it);
    }
    return s;
}

} // namespace

eval::Manifest generate(const fs::path& out, const SynthParams& p) {
    if (p.count < 1 || p.width < 16 || p.height < 16) throw InvalidArgument("synth: need count >= 1 and images of at least 16x16");
    const auto root = fs::absolute(out);
    fs::create_directories(root / "images");
    fs::create_directories(root / "nuclei");
    eval::Manifest m;
    for (int i = 0; i < p.count; ++i) {
        rnd::Engine rng(rnd::splitmix64(p.seed ^ rnd::splitmix64(static_cast<std::uint64_t>(i))));
        const int stage = i % 2;
        const auto slide = render(p.width, p.height, stage, rng);
        char id[32];
        std::snprintf(id, sizeof id, "s%04d", i);
        eval::SlideRecord r;
        r.slide_id = id;
        r.patient_id = std::string("p") + (id + 1);
        r.image_path = root / "images" / (r.slide_id + ".png");
        r.nuclei_path = root / "nuclei" / (r.slide_id + ".png");
        io::write_png_rgb(r.image_path, slide.image);
        features::write_nuclei(slide.nuclei, r.nuclei_path, root / "nuclei" / (r.slide_id + ".csv"));
        r.stage = stage;
        r.time = std::round(stage == 0 ? rnd::uniform(rng, 60, 120) : rnd::uniform(rng, 10, 70));
        r.event = rnd::uniform01(rng) < 0.8;
        m.slides.push_back(std::move(r));
    }
    eval::assign_patient_splits(m, p.train_fraction, p.val_fraction, p.seed);
    eval::write_manifest(root / "manifest.csv", m);

    auto cfg = fixture_config();
    cfg.manifest = root / "manifest.csv";
    cfg.seed = p.seed;
    config::save(root / "config.json", cfg);
    return m;
}

config::RunConfig fixture_config() {
    config::RunConfig c;
    c.tissue.close_radius = 2;
    c.tissue.open_radius = 1;
    c.tissue.min_component_area = 32;
    c.segmentation.seg_mag = 1.0;
    c.segmentation.ref_mag = 1.0;
    c.segmentation.target_side = 10.0;
    c.coarsen.tau = 0.9;
    c.features.xi = 0.99;
    c.model.hidden = 16;
    c.model.layers = 2;
    c.model.heads = 2;
    c.model.mlp_hidden = 16;
    c.model.dropout = 0.1;
    c.model.epochs = 40;
    c.search.trials = 2;
    c.search.instances = 2;
    c.search.lr_min = 1e-3;
    c.search.lr_max = 1e-2;
    c.search.wd_min = 1e-5;
    c.search.wd_max = 1e-3;
    c.explain.steps = 32;
    c.explain.max_slides = 2;
    return c;
}

} // namespace tissuegraph::synth
