#pragma once

#include "spotkit/model.hpp"
#include "spotkit/synth.hpp"

namespace spotkit::testing {

inline ModelConfig tiny_model_config(std::size_t num_classes = 2) {
    ModelConfig cfg;
    cfg.backbone.in_channels = 3;
    cfg.backbone.widths = {8, 16};
    cfg.backbone.feature_dim = 16;
    cfg.entities.k_max = 3;
    cfg.temporal.hidden = 8;
    cfg.temporal.heads = 2;
    cfg.num_classes = num_classes;
    return cfg;
}

inline SynthConfig tiny_synth_config(std::uint64_t seed = 1) {
    SynthConfig cfg;
    cfg.videos = 3;
    cfg.frames = 60;
    cfg.classes = 2;
    cfg.height = 24;
    cfg.width = 24;
    cfg.foreground_ratio = 0.1;
    cfg.seed = seed;
    return cfg;
}

} // namespace spotkit::testing
