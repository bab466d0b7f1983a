#include "tissuegraph/features.hpp"

#include "tissuegraph/error.hpp"

#include <algorithm>

namespace tissuegraph::features {

namespace {

const char* const kFirstOrder[] = {
    "10Percentile", "90Percentile", "Energy", "Entropy", "InterquartileRange", "Kurtosis",
    "Maximum", "MeanAbsoluteDeviation", "Mean", "Median", "Minimum", "Range",
    "RobustMeanAbsoluteDeviation", "RootMeanSquared", "Skewness", "TotalEnergy", "Uniformity", "Variance",
};

const char* const kGlcm[] = {
    "Autocorrelation", "ClusterProminence", "ClusterShade", "ClusterTendency", "Contrast", "Correlation",
    "DifferenceAverage", "DifferenceEntropy", "DifferenceVariance", "Id", "Idm", "Idmn", "Idn", "Imc1",
    "Imc2", "InverseVariance", "JointAverage", "JointEnergy", "JointEntropy", "MCC", "MaximumProbability",
    "SumAverage", "SumEntropy", "SumSquares",
};

const char* const kGlrlm[] = {
    "GrayLevelNonUniformity", "GrayLevelNonUniformityNormalized", "GrayLevelVariance",
    "HighGrayLevelRunEmphasis", "LongRunEmphasis", "LongRunHighGrayLevelEmphasis",
    "LongRunLowGrayLevelEmphasis", "LowGrayLevelRunEmphasis", "RunEntropy", "RunLengthNonUniformity",
    "RunLengthNonUniformityNormalized", "RunPercentage", "RunVariance", "ShortRunEmphasis",
    "ShortRunHighGrayLevelEmphasis", "ShortRunLowGrayLevelEmphasis",
};

const char* const kGlszm[] = {
    "GrayLevelNonUniformity", "GrayLevelNonUniformityNormalized", "GrayLevelVariance",
    "HighGrayLevelZoneEmphasis", "LargeAreaEmphasis", "LargeAreaHighGrayLevelEmphasis",
    "LargeAreaLowGrayLevelEmphasis", "LowGrayLevelZoneEmphasis", "SizeZoneNonUniformity",
    "SizeZoneNonUniformityNormalized", "SmallAreaEmphasis", "SmallAreaHighGrayLevelEmphasis",
    "SmallAreaLowGrayLevelEmphasis", "ZoneEntropy", "ZonePercentage", "ZoneVariance",
};

const char* const kGldm[] = {
    "DependenceEntropy", "DependenceNonUniformity", "DependenceNonUniformityNormalized",
    "DependenceVariance", "GrayLevelNonUniformity", "GrayLevelVariance", "HighGrayLevelEmphasis",
    "LargeDependenceEmphasis", "LargeDependenceHighGrayLevelEmphasis", "LargeDependenceLowGrayLevelEmphasis",
    "LowGrayLevelEmphasis", "SmallDependenceEmphasis", "SmallDependenceHighGrayLevelEmphasis",
    "SmallDependenceLowGrayLevelEmphasis",
};

const char* const kNgtdm[] = {"Busyness", "Coarseness", "Complexity", "Contrast", "Strength"};

const char* const kMorph[] = {
    "mean_r", "mean_g", "mean_b", "mean_h", "mean_s", "mean_v", "mean_l", "mean_a", "mean_(la)b",
    "median_r", "median_g", "median_b", "ratio_bright", "ratio_dark", "10_dark", "10_bright", "mean", "size",
};

const char* const kNuclearGroups[] = {"all", "nolabe", "neopla", "inflam", "connec", "necros", "no-neo"};

const char* const kNuclearStats[] = {
    "count", "mean_area", "std_area", "5p_area", "25p_area", "50p_area", "75p_area", "95p_area",
    "min_area", "max_area", "density",
};

template <std::size_t N>
void append_family(std::vector<std::string>& out, const char* family, const char* const (&names)[N]) {
    for (const char* n : names) out.push_back(std::string("original_") + family + "_" + n);
}

} // namespace

std::vector<std::string> texture_feature_names() {
    std::vector<std::string> out;
    append_family(out, "firstorder", kFirstOrder);
    append_family(out, "glcm", kGlcm);
    append_family(out, "glrlm", kGlrlm);
    append_family(out, "glszm", kGlszm);
    append_family(out, "gldm", kGldm);
    append_family(out, "ngtdm", kNgtdm);
    return out;
}

std::vector<std::string> morph_feature_names() { return {std::begin(kMorph), std::end(kMorph)}; }

std::vector<std::string> nuclear_feature_names() {
    std::vector<std::string> out;
    for (const char* g : kNuclearGroups) {
        for (const char* s : kNuclearStats) out.push_back(std::string(g) + "_" + s);
    }
    return out;
}

std::vector<std::string> lbp_feature_names() {
    std::vector<std::string> out;
    for (int i = 0; i < kLbpCount; ++i) out.push_back("lbp_uniform_" + std::to_string(i));
    return out;
}

FeatureCatalog FeatureCatalog::full(bool include_lbp) {
    FeatureCatalog c;
    auto texture_family = [](const std::string& name) {
        const auto start = name.find('_') + 1;
        return name.substr(start, name.find('_', start) - start);
    };
    for (const auto& n : texture_feature_names()) c.entries_.push_back({n, Group::Texture, texture_family(n)});
    for (const auto& n : morph_feature_names()) c.entries_.push_back({n, Group::Morph, "morph"});
    for (const auto& n : nuclear_feature_names()) {
        c.entries_.push_back({n, Group::Nuclear, n.substr(0, n.find('_'))});
    }
    if (include_lbp) {
        for (const auto& n : lbp_feature_names()) c.entries_.push_back({n, Group::Texture, "lbp"});
    }
    c.active_.assign(c.entries_.size(), true);
    return c;
}

void FeatureCatalog::set_active(std::vector<bool> flags) {
    if (flags.size() != entries_.size()) throw InvalidArgument("FeatureCatalog: active flag count mismatch");
    active_ = std::move(flags);
}

std::size_t FeatureCatalog::active_count() const {
    return static_cast<std::size_t>(std::count(active_.begin(), active_.end(), true));
}

std::vector<int> FeatureCatalog::active_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < active_.size(); ++i) {
        if (active_[i]) out.push_back(static_cast<int>(i));
    }
    return out;
}

std::vector<std::string> FeatureCatalog::active_names() const {
    std::vector<std::string> out;
    for (int i : active_indices()) out.push_back(entries_[i].name);
    return out;
}

std::vector<std::string> FeatureCatalog::names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
}

int FeatureCatalog::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

} // namespace tissuegraph::features
