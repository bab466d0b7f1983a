#include "tissuegraph/features.hpp"

#include "binio.hpp"
#include "tissuegraph/coarsen.hpp"
#include "tissuegraph/error.hpp"
#include "tissuegraph/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace tissuegraph::features {

std::vector<double> extract_morph(const raster::RgbImage& img, std::span<const std::size_t> pixels,
                                  const MorphParams& params) {
    if (pixels.empty()) throw InvalidArgument("extract_morph: empty region");
    const auto data = img.data();
    const double n = static_cast<double>(pixels.size());
    double sums[9] = {};
    std::vector<double> channel[3], gray;
    for (auto& c : channel) c.reserve(pixels.size());
    gray.reserve(pixels.size());
    double bright = 0, dark = 0, gray_sum = 0;
    for (std::size_t idx : pixels) {
        if (idx >= img.pixel_count()) throw InvalidArgument("extract_morph: pixel index out of range");
        const std::uint8_t r = data[3 * idx], g = data[3 * idx + 1], b = data[3 * idx + 2];
        const auto hsv = raster::rgb_to_hsv(r, g, b);
        const auto lab = raster::rgb_to_lab(r, g, b);
        const double y = raster::rgb_to_gray(r, g, b);
        const double vals[9] = {double(r), double(g), double(b), hsv[0], hsv[1], hsv[2], lab[0], lab[1], lab[2]};
        for (int k = 0; k < 9; ++k) sums[k] += vals[k];
        channel[0].push_back(r);
        channel[1].push_back(g);
        channel[2].push_back(b);
        gray.push_back(y);
        gray_sum += y;
        if (y > params.bright_cutoff) bright += 1;
        if (y < params.dark_cutoff) dark += 1;
    }
    std::vector<double> out;
    out.reserve(kMorphCount);
    for (double s : sums) out.push_back(s / n);
    for (auto& c : channel) out.push_back(percentile(std::move(c), 50));
    out.push_back(bright / n);
    out.push_back(dark / n);
    out.push_back(percentile(gray, 10));
    out.push_back(percentile(gray, 90));
    out.push_back(gray_sum / n);
    out.push_back(n);
    return out;
}

std::map<std::uint32_t, std::int64_t> nucleus_areas(const NucleiMap& nuclei) {
    std::map<std::uint32_t, std::int64_t> areas;
    for (auto id : nuclei.instance) {
        if (id != 0) ++areas[id];
    }
    return areas;
}

namespace {

constexpr int kNuclearGroupCount = 7;
constexpr int kNuclearStatCount = 11;

void append_group_stats(std::vector<double>& out, std::vector<double> areas, double region_area) {
    if (areas.empty()) {
        out.insert(out.end(), kNuclearStatCount, 0.0);
        return;
    }
    const double n = static_cast<double>(areas.size());
    double sum = 0;
    for (double a : areas) sum += a;
    const double mean = sum / n;
    double var = 0;
    for (double a : areas) var += (a - mean) * (a - mean);
    var /= n;
    std::sort(areas.begin(), areas.end());
    out.push_back(n);
    out.push_back(mean);
    out.push_back(std::sqrt(var));
    for (double q : {5.0, 25.0, 50.0, 75.0, 95.0}) out.push_back(percentile(areas, q));
    out.push_back(areas.front());
    out.push_back(areas.back());
    out.push_back(n / region_area);
}

// Groups in catalog order: all, then type codes 0..5.
std::vector<double> nuclear_vector(const std::vector<std::pair<int, double>>& members, double region_area) {
    std::vector<double> out;
    out.reserve(kNuclearCount);
    std::vector<double> by_group[kNuclearGroupCount];
    for (auto [type, area] : members) {
        by_group[0].push_back(area);
        by_group[1 + type].push_back(area);
    }
    for (auto& g : by_group) append_group_stats(out, std::move(g), region_area);
    return out;
}

int type_of(const NucleiMap& nuclei, std::uint32_t id) {
    auto it = nuclei.types.find(id);
    if (it == nuclei.types.end()) {
        throw InvalidArgument("nuclei: instance " + std::to_string(id) + " has no type record");
    }
    if (it->second < 0 || it->second > 5) {
        throw InvalidArgument("nuclei: instance " + std::to_string(id) + " has type outside 0-5");
    }
    return it->second;
}

} // namespace

std::vector<double> extract_nuclear(std::span<const std::size_t> pixels, const NucleiMap& nuclei) {
    const auto areas = nucleus_areas(nuclei);
    std::map<std::uint32_t, std::int64_t> inside;
    for (std::size_t idx : pixels) {
        if (idx >= nuclei.instance.size()) throw InvalidArgument("extract_nuclear: pixel index out of range");
        const auto id = nuclei.instance[idx];
        if (id != 0) ++inside[id];
    }
    std::vector<std::pair<int, double>> members;
    for (auto [id, count] : inside) {
        const auto area = areas.at(id);
        if (2 * count > area) members.emplace_back(type_of(nuclei, id), static_cast<double>(area));
    }
    return nuclear_vector(members, static_cast<double>(pixels.size()));
}

std::vector<std::vector<double>> extract_nuclear_all(const superpixel::LabelMap& labels, const NucleiMap& nuclei) {
    if (labels.width != nuclei.width || labels.height != nuclei.height) {
        throw InvalidArgument("extract_nuclear_all: nuclei map and label map dimensions differ");
    }
    int max_label = -1;
    for (int l : labels.labels) max_label = std::max(max_label, l);
    const std::size_t regions = static_cast<std::size_t>(max_label + 1);

    const auto areas = nucleus_areas(nuclei);
    std::vector<std::map<std::uint32_t, std::int64_t>> inside(regions);
    std::vector<double> region_area(regions, 0.0);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const int l = labels.labels[i];
        if (l < 0) continue;
        region_area[l] += 1;
        if (nuclei.instance[i] != 0) ++inside[l][nuclei.instance[i]];
    }
    std::vector<std::vector<double>> out(regions);
    for (std::size_t r = 0; r < regions; ++r) {
        std::vector<std::pair<int, double>> members;
        for (auto [id, count] : inside[r]) {
            const auto area = areas.at(id);
            if (2 * count > area) members.emplace_back(type_of(nuclei, id), static_cast<double>(area));
        }
        out[r] = region_area[r] > 0 ? nuclear_vector(members, region_area[r]) : std::vector<double>(kNuclearCount, 0.0);
    }
    return out;
}

NucleiMap read_nuclei(const std::filesystem::path& png, const std::filesystem::path& csv) {
    const auto raster = io::read_png_gray(png);
    NucleiMap m;
    m.width = raster.width;
    m.height = raster.height;
    m.instance.assign(raster.values.begin(), raster.values.end());

    std::ifstream in(csv);
    if (!in) throw IoError("cannot open " + csv.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError(csv.string() + ": empty sidecar");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "instance_id,type") throw IoError(csv.string() + ": expected header 'instance_id,type'");
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ss(line);
        long id = -1, type = -1;
        char comma = 0;
        if (!(ss >> id >> comma >> type) || comma != ',' || id <= 0 || type < 0 || type > 5) {
            throw IoError(csv.string() + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
        }
        m.types[static_cast<std::uint32_t>(id)] = static_cast<int>(type);
    }
    for (const auto& [id, area] : nucleus_areas(m)) {
        if (!m.types.count(id)) {
            throw IoError(csv.string() + ": instance " + std::to_string(id) + " missing from sidecar");
        }
    }
    return m;
}

void write_nuclei(const NucleiMap& nuclei, const std::filesystem::path& png, const std::filesystem::path& csv) {
    io::GrayRaster r{nuclei.width, nuclei.height, 16, {}};
    r.values.reserve(nuclei.instance.size());
    for (auto id : nuclei.instance) {
        if (id > 65535) throw InvalidArgument("write_nuclei: instance ids must fit in 16 bits");
        r.values.push_back(static_cast<std::uint16_t>(id));
    }
    io::write_png_gray(png, r);
    std::ofstream out(csv, std::ios::trunc);
    if (!out) throw IoError("cannot write " + csv.string());
    out << "instance_id,type\n";
    for (const auto& [id, type] : nuclei.types) out << id << ',' << type << '\n';
}

Eigen::MatrixXd extract_node_features(const raster::RgbImage& img, const superpixel::LabelMap& labels,
                                      const NucleiMap* nuclei, std::span<const int> node_ids,
                                      const ExtractParams& params) {
    if (labels.width != img.width() || labels.height != img.height()) {
        throw InvalidArgument("extract_node_features: label map and image dimensions differ");
    }
    const auto regions = coarsen::pixels_by_label(labels);
    std::vector<std::vector<double>> nuclear;
    if (nuclei) nuclear = extract_nuclear_all(labels, *nuclei);

    const int cols = kFullCount + (params.include_lbp ? kLbpCount : 0);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(node_ids.size()), cols);
    const int w = img.width();
    const auto data = img.data();

    for (std::size_t row = 0; row < node_ids.size(); ++row) {
        const int id = node_ids[row];
        if (id < 0 || static_cast<std::size_t>(id) >= regions.size() || regions[id].empty()) {
            throw InvalidArgument("extract_node_features: node " + std::to_string(id) + " has no pixels");
        }
        const auto& pixels = regions[id];

        int x0 = w, y0 = img.height(), x1 = 0, y1 = 0;
        for (std::size_t idx : pixels) {
            const int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x + 1);
            y1 = std::max(y1, y + 1);
        }
        GrayRegion region;
        region.width = x1 - x0;
        region.height = y1 - y0;
        region.values.assign(static_cast<std::size_t>(region.width) * region.height, 0.0);
        region.inside.assign(region.values.size(), 0);
        for (std::size_t idx : pixels) {
            const int x = static_cast<int>(idx % w) - x0, y = static_cast<int>(idx / w) - y0;
            const std::size_t k = static_cast<std::size_t>(y) * region.width + x;
            region.values[k] = raster::rgb_to_gray(data[3 * idx], data[3 * idx + 1], data[3 * idx + 2]);
            region.inside[k] = 1;
        }

        std::vector<double> v = extract_texture(region, params.levels);
        const auto morph = extract_morph(img, pixels, params.morph);
        v.insert(v.end(), morph.begin(), morph.end());
        if (nuclei) {
            v.insert(v.end(), nuclear[id].begin(), nuclear[id].end());
        } else {
            v.insert(v.end(), kNuclearCount, 0.0);
        }
        if (params.include_lbp) {
            const auto lbp = extract_lbp(region);
            v.insert(v.end(), lbp.begin(), lbp.end());
        }
        for (int c = 0; c < cols; ++c) out(static_cast<Eigen::Index>(row), c) = v[c];
    }
    return out;
}

double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
    if (a.size() != b.size()) throw InvalidArgument("pearson: length mismatch");
    if (a.size() < 2) throw InvalidArgument("pearson: need at least two samples");
    if (a.maxCoeff() == a.minCoeff() || b.maxCoeff() == b.minCoeff()) return 0.0;
    const Eigen::VectorXd ca = a.array() - a.mean();
    const Eigen::VectorXd cb = b.array() - b.mean();
    const double den = std::sqrt(ca.squaredNorm()) * std::sqrt(cb.squaredNorm());
    if (den == 0) return 0.0;
    return std::clamp(ca.dot(cb) / den, -1.0, 1.0);
}

std::vector<bool> prune_correlated(const Eigen::MatrixXd& samples, double xi) {
    return prune_correlated(samples, xi, std::vector<bool>(static_cast<std::size_t>(samples.cols()), true));
}

std::vector<bool> prune_correlated(const Eigen::MatrixXd& samples, double xi, const std::vector<bool>& initially_active) {
    if (samples.rows() < 2) throw InvalidArgument("prune_correlated: need at least two samples");
    if (!(xi > 0.0 && xi <= 1.0)) throw InvalidArgument("prune_correlated: xi must lie in (0, 1]");
    if (initially_active.size() != static_cast<std::size_t>(samples.cols())) {
        throw InvalidArgument("prune_correlated: active flag count mismatch");
    }
    for (Eigen::Index i = 0; i < samples.size(); ++i) {
        if (!std::isfinite(samples.data()[i])) throw InvalidArgument("prune_correlated: non-finite sample");
    }

    // Unit-norm centred columns; constant columns become zero vectors.
    const Eigen::Index n = samples.cols();
    Eigen::MatrixXd unit(samples.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto col = samples.col(j);
        if (col.maxCoeff() == col.minCoeff()) {
            unit.col(j).setZero();
            continue;
        }
        unit.col(j) = col.array() - col.mean();
        const double norm = unit.col(j).norm();
        if (norm > 0) unit.col(j) /= norm;
        else unit.col(j).setZero();
    }

    std::vector<bool> active = initially_active;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!active[i]) continue;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            if (!active[j]) continue;
            const double rho = std::clamp(unit.col(i).dot(unit.col(j)), -1.0, 1.0);
            if (std::abs(rho) > xi) active[j] = false;
        }
    }
    return active;
}

namespace {
constexpr std::uint32_t kFeatureFileVersion = 1;
}

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m) {
    if (static_cast<Eigen::Index>(m.names.size()) != m.values.cols() ||
        static_cast<Eigen::Index>(m.node_ids.size()) != m.values.rows()) {
        throw InvalidArgument("write_feature_matrix: shape does not match names/node ids");
    }
    binio::Writer w;
    w.magic("TGFM");
    w.u32(kFeatureFileVersion);
    w.u32(static_cast<std::uint32_t>(m.values.rows()));
    w.u32(static_cast<std::uint32_t>(m.values.cols()));
    std::string joined;
    for (std::size_t i = 0; i < m.names.size(); ++i) {
        if (m.names[i].find('\n') != std::string::npos) throw InvalidArgument("feature names cannot contain newlines");
        if (i) joined += '\n';
        joined += m.names[i];
    }
    w.str(joined);
    for (int id : m.node_ids) w.u32(static_cast<std::uint32_t>(id));
    for (Eigen::Index r = 0; r < m.values.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.values.cols(); ++c) w.f64(m.values(r, c));
    }
    w.save(path);
}

FeatureMatrix read_feature_matrix(const std::filesystem::path& path) {
    auto r = binio::Reader::load(path);
    r.expect_magic("TGFM");
    if (r.u32() != kFeatureFileVersion) throw IoError(path.string() + ": unsupported feature file version");
    const std::uint32_t rows = r.u32(), cols = r.u32();
    FeatureMatrix m;
    const std::string joined = r.str();
    if (cols > 0) {
        std::size_t start = 0;
        while (true) {
            const auto nl = joined.find('\n', start);
            m.names.push_back(joined.substr(start, nl == std::string::npos ? std::string::npos : nl - start));
            if (nl == std::string::npos) break;
            start = nl + 1;
        }
    }
    if (m.names.size() != cols) throw IoError(path.string() + ": name count does not match column count");
    for (std::uint32_t i = 0; i < rows; ++i) m.node_ids.push_back(static_cast<int>(r.u32()));
    m.values.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < cols; ++j) m.values(i, j) = r.f64();
    }
    if (!r.at_end()) throw IoError(path.string() + ": trailing bytes");
    return m;
}

FeatureMatrix select_columns(const FeatureMatrix& m, const std::vector<std::string>& names) {
    std::unordered_map<std::string, Eigen::Index> pos;
    for (std::size_t i = 0; i < m.names.size(); ++i) pos[m.names[i]] = static_cast<Eigen::Index>(i);
    FeatureMatrix out;
    out.names = names;
    out.node_ids = m.node_ids;
    out.values.resize(m.values.rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t k = 0; k < names.size(); ++k) {
        auto it = pos.find(names[k]);
        if (it == pos.end()) throw InvalidArgument("select_columns: unknown feature " + names[k]);
        out.values.col(static_cast<Eigen::Index>(k)) = m.values.col(it->second);
    }
    return out;
}

} // namespace tissuegraph::features
