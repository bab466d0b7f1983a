#pragma once

#include "tissuegraph/config.hpp"
#include "tissuegraph/eval.hpp"

#include <cstdint>
#include <filesystem>

namespace tissuegraph::synth {

struct SynthParams {
    int count = 200;
    int width = 96;
    int height = 96;
    std::uint64_t seed = 0;
    double train_fraction = 0.6;
    double val_fraction = 0.2;
};

/// Two-class benchmark: a pink tissue blob on a light background whose
/// stripe texture is coarse for stage I and fine for stage II, with sparse
/// (stage I) or dense (stage II) dark nuclei. Writes images/<id>.png,
/// nuclei/<id>.png + .csv, manifest.csv and config.json under `out` and
/// returns the manifest with absolute paths. One patient per slide;
/// survival times are longer for stage I.
eval::Manifest generate(const std::filesystem::path& out, const SynthParams& params);

/// Run settings sized for the fixture: small regions, compact model, short
/// search.
config::RunConfig fixture_config();

} // namespace tissuegraph::synth
