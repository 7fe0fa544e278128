#pragma once

#include "spotkit/dataset.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace spotkit {

struct SynthConfig {
    std::size_t videos = 20;
    std::size_t frames = 1000;
    double fps = 2.0;
    std::size_t classes = 5;
    // Expected share of labelled frames.
    double foreground_ratio = 0.02;
    // Class k is drawn with weight decay^(k-1).
    double class_decay = 0.5;
    // Brightness of entity patches above the background.
    double entity_strength = 1.0;
    double entity_probability = 0.9;
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t channels = 3;
    double noise = 0.1;
    std::size_t min_gap = 5;
    double jitter_probability = 0.1;
    double spurious_probability = 0.05;
    std::array<double, 3> split{0.7, 0.15, 0.15};
    std::uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
};

// Default class names for K classes; the last two are the entity-only pair.
std::vector<std::string> synth_class_names(std::size_t k);
// Vocabulary: one salient phrase per class followed by distractor phrases.
std::vector<std::string> synth_phrases(std::size_t k);
// Relative class weights decay^(k-1), normalised to sum to one.
std::vector<double> class_weights(std::size_t k, double decay);

// Frame positions of `count` events on [margin, frames - margin) with
// pairwise gaps of at least min_gap, uniform over all valid placements.
std::vector<std::size_t> place_events(std::size_t count, std::size_t frames, std::size_t min_gap, std::size_t margin,
                                      Rng& rng);

Dataset generate_dataset(const SynthConfig& cfg);

// Video-level partition of ids by fractions (train, val, test).
DatasetSplit split_videos(const std::vector<std::string>& ids, const std::array<double, 3>& fractions, std::uint64_t seed);

} // namespace spotkit
