#pragma once

#include "spotkit/gradcheck.hpp"
#include "spotkit/losses.hpp"
#include "spotkit/model.hpp"
#include "spotkit/rng.hpp"

#include <vector>

namespace spotkit::testing {

// A 4-frame, 8x8 snippet with two detected entities per frame and K = 3.
struct GradCheckSetup {
    ModelConfig config;
    FrameSequence frames;
    DetectionsByFrame detections;
    LabelMatrix labels;
};

inline GradCheckSetup gradcheck_setup(std::uint64_t seed) {
    GradCheckSetup s;
    s.config.backbone.in_channels = 3;
    s.config.backbone.widths = {8, 8};
    s.config.backbone.feature_dim = 8;
    s.config.entities.k_max = 3;
    s.config.temporal.hidden = 6;
    s.config.temporal.heads = 2;
    s.config.num_classes = 3;

    Rng rng = Rng(seed).split("gradcheck");
    const std::size_t t = 4, c = 3, h = 8, w = 8;
    std::vector<double> pixels(t * c * h * w);
    for (auto& x : pixels) x = rng.uniform(-1.0, 1.0);
    s.frames.frames = Tensor::from({t, c, h, w}, pixels);
    s.frames.fps = 2.0;

    s.detections.resize(t);
    for (std::size_t f = 0; f < t; ++f) {
        for (std::size_t e = 0; e < 2; ++e) {
            EntityDetection d;
            d.frame = f;
            const double x1 = rng.uniform(0.0, 0.5), y1 = rng.uniform(0.0, 0.5);
            d.box = {x1, y1, x1 + rng.uniform(0.2, 0.5), y1 + rng.uniform(0.2, 0.5)};
            d.phrase = e;
            d.confidence = rng.uniform(0.3, 1.0);
            s.detections[f].push_back(d);
        }
    }
    s.labels = LabelMatrix({0, 2, 0, 3}, 3);
    return s;
}

inline GradCheckReport full_model_gradcheck(std::uint64_t seed, double alpha = 0.25, double gamma = 5.0) {
    const GradCheckSetup s = gradcheck_setup(seed);
    const SpottingModel model(s.config, seed);
    const auto loss = [&] { return focal_loss(model.scores(s.frames, s.detections), s.labels, alpha, gamma); };
    GradCheckOptions options;
    options.steps = {1e-4, 3e-5, 1e-5};
    return finite_difference_check(loss, model.parameters().tensors(), options);
}

} // namespace spotkit::testing
