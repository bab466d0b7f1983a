#include "tissuegraph/eval.hpp"

#include "tissuegraph/error.hpp"
#include "tissuegraph/features.hpp"
#include "tissuegraph/random.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace tissuegraph::eval {

namespace {

constexpr int kClasses = 4;

void check_labels(std::span<const int> labels, const char* what) {
    for (int y : labels) {
        if (y < 0 || y >= kClasses) throw InvalidArgument(std::string(what) + ": label out of range");
    }
}

} // namespace

double binary_auc(std::span<const double> scores, std::span<const int> positive) {
    if (scores.size() != positive.size()) throw InvalidArgument("binary_auc: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Twice the midrank sum of positives keeps everything integral.
    double twice_rank_sum = 0, pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double twice_midrank = static_cast<double>(i + 1 + j);  // (i+1) + j = 2 * average 1-based rank
        for (std::size_t k = i; k < j; ++k) {
            if (positive[order[k]]) {
                twice_rank_sum += twice_midrank;
                pos += 1;
            }
        }
        i = j;
    }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0 || neg == 0) throw UndefinedMetric("binary_auc: need both positives and negatives");
    const double twice_u = twice_rank_sum - pos * (pos + 1);
    return 100.0 * ((twice_u / 2) / (pos * neg));
}

double auc_macro(const Eigen::MatrixXd& probabilities, std::span<const int> labels, std::vector<std::string>* warnings) {
    if (probabilities.rows() != static_cast<Eigen::Index>(labels.size()) || probabilities.cols() != kClasses) {
        throw InvalidArgument("auc_macro: probabilities must be n x 4 with n labels");
    }
    if (labels.size() < 2) throw InvalidArgument("auc_macro: need at least two samples");
    check_labels(labels, "auc_macro");
    double sum = 0;
    int used = 0;
    for (int c = 0; c < kClasses; ++c) {
        std::vector<int> pos(labels.size());
        int count = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) count += pos[i] = labels[i] == c;
        if (count == 0) continue;
        if (count == static_cast<int>(labels.size())) {
            if (warnings) warnings->push_back("auc_macro: class " + std::to_string(c) + " has no negatives, skipped");
            continue;
        }
        std::vector<double> scores(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) scores[i] = probabilities(static_cast<Eigen::Index>(i), c);
        sum += binary_auc(scores, pos);
        ++used;
    }
    if (used == 0) throw UndefinedMetric("auc_macro: no class has both positives and negatives");
    return sum / used;
}

double f1_macro(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw InvalidArgument("f1_macro: length mismatch");
    check_labels(labels, "f1_macro");
    check_labels(predictions, "f1_macro");
    double sum = 0;
    for (int c = 0; c < kClasses; ++c) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            tp += predictions[i] == c && labels[i] == c;
            fp += predictions[i] == c && labels[i] != c;
            fn += predictions[i] != c && labels[i] == c;
        }
        const double den = 2 * tp + fp + fn;
        sum += den > 0 ? 2 * tp / den : 0.0;
    }
    return 100.0 * (sum / kClasses);
}

double balanced_accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw InvalidArgument("balanced_accuracy: length mismatch");
    if (labels.empty()) throw InvalidArgument("balanced_accuracy: no samples");
    check_labels(labels, "balanced_accuracy");
    double sum = 0;
    int present = 0;
    for (int c = 0; c < kClasses; ++c) {
        double hit = 0, total = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != c) continue;
            total += 1;
            hit += predictions[i] == c;
        }
        if (total == 0) continue;
        sum += hit / total;
        ++present;
    }
    return 100.0 * (sum / present);
}

double c_index(std::span<const double> risks, std::span<const double> times, std::span<const int> events) {
    if (risks.size() != times.size() || risks.size() != events.size()) throw InvalidArgument("c_index: length mismatch");
    if (risks.size() < 2) throw InvalidArgument("c_index: need at least two subjects");
    double credit = 0, pairs = 0;
    for (std::size_t i = 0; i < risks.size(); ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < risks.size(); ++j) {
            if (!(times[i] < times[j])) continue;
            pairs += 1;
            if (risks[i] > risks[j]) credit += 1;
            else if (risks[i] == risks[j]) credit += 0.5;
        }
    }
    if (pairs == 0) throw UndefinedMetric("c_index: no comparable pairs");
    return 100.0 * (credit / pairs);
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& probabilities) {
    std::vector<int> out;
    for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
        Eigen::Index best = 0;
        probabilities.row(r).maxCoeff(&best);
        out.push_back(static_cast<int>(best));
    }
    return out;
}

std::vector<double> expected_class(const Eigen::MatrixXd& probabilities) {
    std::vector<double> out;
    for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
        double s = 0;
        for (Eigen::Index c = 0; c < probabilities.cols(); ++c) s += static_cast<double>(c) * probabilities(r, c);
        out.push_back(s);
    }
    return out;
}

std::vector<int> discretize_survival(std::span<const double> times, std::span<const int> events, int bins) {
    if (times.size() != events.size()) throw InvalidArgument("discretize_survival: length mismatch");
    if (bins < 1) throw InvalidArgument("discretize_survival: bins must be >= 1");
    std::vector<double> observed;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (events[i]) observed.push_back(times[i]);
    }
    if (static_cast<int>(observed.size()) < bins) {
        throw InvalidArgument("discretize_survival: need at least " + std::to_string(bins) + " uncensored subjects");
    }
    std::vector<double> edges;
    for (int k = 1; k < bins; ++k) edges.push_back(features::percentile(observed, 100.0 * k / bins));
    std::vector<int> out;
    for (double t : times) {
        int b = 0;
        for (double e : edges) b += t > e;
        out.push_back(b);
    }
    return out;
}

double t_statistic(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw InvalidArgument("t_test: each sample needs at least two values");
    auto mean = [](std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    auto ss = [](std::span<const double> v, double m) {
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return s;
    };
    const double ma = mean(a), mb = mean(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double pooled = (ss(a, ma) + ss(b, mb)) / (na + nb - 2);
    if (pooled == 0) {
        if (ma == mb) return 0.0;
        throw DegenerateInput("t_test: zero variance in both samples");
    }
    return (ma - mb) / std::sqrt(pooled * (1 / na + 1 / nb));
}

double t_test(std::span<const double> a, std::span<const double> b) {
    const double t = t_statistic(a, b);
    if (t == 0) return 1.0;
    const boost::math::students_t dist(static_cast<double>(a.size() + b.size() - 2));
    return std::min(1.0, 2.0 * boost::math::cdf(dist, -std::fabs(t)));
}

// ---------------------------------------------------------------- manifest

std::string stage_name(int stage) {
    static const char* names[] = {"I", "II", "III", "IV"};
    if (stage < 0 || stage >= kClasses) throw InvalidArgument("stage out of range");
    return names[stage];
}

int parse_stage(const std::string& text) {
    static const std::map<std::string, int> names = {{"I", 0}, {"II", 1}, {"III", 2}, {"IV", 3}};
    auto it = names.find(text);
    if (it == names.end()) throw InvalidArgument("unknown stage '" + text + "' (expected I, II, III or IV)");
    return it->second;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || !std::isfinite(v)) throw IoError("manifest: bad " + what + " '" + s + "'");
    return v;
}

} // namespace

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("manifest is empty: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kManifestHeader) throw IoError("manifest header must be: " + std::string(kManifestHeader));
    const auto base = path.parent_path();
    auto resolve = [&base](const std::string& p) -> std::filesystem::path {
        if (p.empty()) return {};
        const std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    Manifest m;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv(line);
        if (f.size() != 9) throw IoError("manifest row " + std::to_string(row) + ": expected 9 fields");
        SlideRecord r;
        r.slide_id = f[0];
        r.patient_id = f[1];
        if (r.slide_id.empty() || r.patient_id.empty()) {
            throw IoError("manifest row " + std::to_string(row) + ": slide and patient ids are required");
        }
        r.image_path = resolve(f[2]);
        r.nuclei_path = resolve(f[3]);
        r.embedding_path = resolve(f[4]);
        try {
            if (!f[5].empty()) r.stage = parse_stage(f[5]);
        } catch (const InvalidArgument& e) {
            throw IoError("manifest row " + std::to_string(row) + ": " + e.what());
        }
        if (!f[6].empty()) r.time = parse_number(f[6], "time");
        if (!f[7].empty()) {
            if (f[7] != "0" && f[7] != "1") throw IoError("manifest row " + std::to_string(row) + ": event must be 0 or 1");
            r.event = f[7] == "1";
        }
        r.split = f[8];
        m.slides.push_back(std::move(r));
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    const auto base = path.parent_path();
    auto rel = [&base](const std::filesystem::path& p) -> std::string {
        if (p.empty()) return "";
        return p.lexically_relative(base).empty() ? p.string() : p.lexically_relative(base).string();
    };
    out << kManifestHeader << '\n';
    out << std::setprecision(17);
    for (const auto& r : manifest.slides) {
        out << r.slide_id << ',' << r.patient_id << ',' << rel(r.image_path) << ',' << rel(r.nuclei_path) << ','
            << rel(r.embedding_path) << ',' << (r.stage ? stage_name(*r.stage) : "") << ',';
        if (r.time) out << *r.time;
        out << ',';
        if (r.event) out << (*r.event ? 1 : 0);
        out << ',' << r.split << '\n';
    }
}

void assign_patient_splits(Manifest& manifest, double train_fraction, double val_fraction, std::uint64_t seed) {
    if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1) {
        throw InvalidArgument("assign_patient_splits: fractions must be non-negative and sum to at most 1");
    }
    std::set<std::string> unique;
    for (const auto& s : manifest.slides) unique.insert(s.patient_id);
    std::vector<std::string> patients(unique.begin(), unique.end());
    rnd::Engine rng(seed);
    rnd::shuffle(patients, rng);
    const auto n = static_cast<double>(patients.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * n));
    std::map<std::string, std::string> split;
    for (std::size_t i = 0; i < patients.size(); ++i) {
        split[patients[i]] = i < n_train ? "train" : i < n_train + n_val ? "val" : "test";
    }
    for (auto& s : manifest.slides) s.split = split[s.patient_id];
}

void validate_patient_splits(const Manifest& manifest) {
    std::map<std::string, std::string> seen;
    for (const auto& s : manifest.slides) {
        if (s.split != "train" && s.split != "val" && s.split != "test") {
            throw InvalidArgument("slide " + s.slide_id + ": unknown split '" + s.split + "'");
        }
        auto [it, inserted] = seen.emplace(s.patient_id, s.split);
        if (!inserted && it->second != s.split) {
            throw InvalidArgument("patient " + s.patient_id + " appears in both " + it->second + " and " + s.split);
        }
    }
}

// ----------------------------------------------------------- random search

std::uint64_t instance_seed(std::uint64_t seed, int trial, int instance) {
    const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(trial)) << 32) |
                              static_cast<std::uint32_t>(instance);
    return seed ^ rnd::splitmix64(key);
}

std::vector<std::pair<double, double>> sample_hyperparameters(const SearchConfig& cfg) {
    if (cfg.trials < 1 || cfg.instances < 1) throw InvalidArgument("random_search: trials and instances must be >= 1");
    if (!(cfg.lr_min > 0 && cfg.lr_min <= cfg.lr_max && cfg.wd_min > 0 && cfg.wd_min <= cfg.wd_max)) {
        throw InvalidArgument("random_search: ranges must be positive and ordered");
    }
    rnd::Engine rng(cfg.seed);
    std::vector<std::pair<double, double>> out;
    for (int t = 0; t < cfg.trials; ++t) {
        const double lr = std::exp(rnd::uniform(rng, std::log(cfg.lr_min), std::log(cfg.lr_max)));
        const double wd = std::exp(rnd::uniform(rng, std::log(cfg.wd_min), std::log(cfg.wd_max)));
        out.emplace_back(lr, wd);
    }
    return out;
}

SearchResult random_search(const SearchConfig& cfg, const InstanceRunner& run) {
    const auto params = sample_hyperparameters(cfg);
    SearchResult result;
    for (int t = 0; t < cfg.trials; ++t) {
        TrialResult tr;
        tr.trial = t;
        tr.lr = params[t].first;
        tr.weight_decay = params[t].second;
        for (int i = 0; i < cfg.instances; ++i) {
            InstanceScore s;
            s.instance = i;
            s.seed = instance_seed(cfg.seed, t, i);
            std::tie(s.validation, s.test) = run(tr.lr, tr.weight_decay, s.seed);
            tr.instances.push_back(s);
        }
        const double n = cfg.instances;
        for (const auto& s : tr.instances) {
            tr.mean_validation += s.validation / n;
            tr.mean_test += s.test / n;
        }
        double ss = 0;
        for (const auto& s : tr.instances) ss += (s.test - tr.mean_test) * (s.test - tr.mean_test);
        tr.std_test = cfg.instances > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
        if (t == 0 || tr.mean_validation > result.trials[result.best].mean_validation) result.best = t;
        result.trials.push_back(std::move(tr));
    }
    return result;
}

void write_search_jsonl(const std::filesystem::path& path, const SearchResult& result) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& t : result.trials) {
        for (const auto& s : t.instances) {
            nlohmann::ordered_json j;
            j["trial"] = t.trial;
            j["instance"] = s.instance;
            j["seed"] = s.seed;
            j["lr"] = t.lr;
            j["weight_decay"] = t.weight_decay;
            j["validation"] = s.validation;
            j["test"] = s.test;
            j["best_trial"] = t.trial == result.best;
            out << j.dump() << '\n';
        }
    }
}

std::string format_search_summary(const SearchResult& result, const std::string& metric_name) {
    std::ostringstream os;
    os << std::left << std::setw(7) << "trial" << std::setw(12) << "lr" << std::setw(12) << "wd" << std::setw(14)
       << ("val " + metric_name) << "test " << metric_name << '\n';
    os << std::fixed;
    for (const auto& t : result.trials) {
        std::ostringstream lr, wd, val, test;
        lr << std::scientific << std::setprecision(2) << t.lr;
        wd << std::scientific << std::setprecision(2) << t.weight_decay;
        val << std::fixed << std::setprecision(1) << t.mean_validation;
        test << std::fixed << std::setprecision(1) << t.mean_test << " +/- " << t.std_test;
        os << std::setw(7) << t.trial << std::setw(12) << lr.str() << std::setw(12) << wd.str() << std::setw(14)
           << val.str() << test.str() << (t.trial == result.best ? "  *" : "") << '\n';
    }
    return os.str();
}

} // namespace tissuegraph::eval
