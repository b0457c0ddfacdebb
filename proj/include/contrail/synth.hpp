#pragma once

#include "contrail/config.hpp"
#include "contrail/dataset.hpp"

#include <cstdint>
#include <vector>

namespace contrail::synth {

// Scenes of linear cold streaks over a smooth warm background. Each streak
// is a thick line segment that either crosses an image edge on its first
// frame or appears whole in the interior, then drifts sideways and widens
// while persisting to the last frame.
struct SyntheticSceneSpec {
    int frames = 4;
    int height = 64;
    int width = 64;
    int min_contrails = 1;
    int max_contrails = 3;
    double min_width = 1.0; // px, first-frame streak width
    double max_width = 3.0;
    double min_length = 24.0; // px, full segment length
    double max_length = 48.0;
    double min_depression = 2.0; // K drop of the 11.2 um band along the streak
    double max_depression = 6.0;
    double background_lo = 250.0; // K, 11.2 um background range
    double background_hi = 290.0;
    double growth = 0.35;    // px of widening per frame
    double max_drift = 0.75; // px of sideways motion per frame
    double noise = 0.15;     // K, per-pixel Gaussian sensor noise
    std::uint64_t seed = 0;

    // Throws BadSpec when a range is inverted or the ranges cannot guarantee
    // that every streak meets the labeling rules.
    void validate() const;

    static SyntheticSceneSpec from_config(const KeyValueConfig& cfg);
};

// Deterministic in (spec, record index). Record ids are "rec_<seed>_<index>".
std::vector<dataset::RecordBundle> synth_generate(const SyntheticSceneSpec& spec, int n_records);

dataset::RecordBundle synth_record(const SyntheticSceneSpec& spec, int index);

} // namespace contrail::synth
