#include "spotkit/errors.hpp"
#include "spotkit/model.hpp"
#include "spotkit/ops.hpp"
#include "model_gradcheck.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace spotkit;
using spotkit::testing::gradcheck_setup;

TEST_CASE("scores are per-frame distributions over K + 1 classes") {
    const auto s = gradcheck_setup(1);
    const SpottingModel model(s.config, 1);
    const ForwardTrace trace = model.forward(s.frames, s.detections);
    const std::size_t d = s.config.backbone.feature_dim;
    CHECK(trace.env.shape() == Shape{4, d});
    CHECK(trace.ent.shape() == Shape{4, d});
    CHECK(trace.fused.shape() == Shape{4, d});
    CHECK(trace.hidden.shape() == Shape{4, s.config.temporal.hidden});
    CHECK(trace.scores.shape() == Shape{4, 4});
    for (std::size_t t = 0; t < 4; ++t) {
        double row = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(trace.scores.at(t, k) > 0.0);
            row += trace.scores.at(t, k);
        }
        CHECK(std::abs(row - 1.0) <= 1e-12);
    }
    CHECK(testing::max_abs_diff(trace.scores, softmax(trace.logits, 1)) == 0.0);
}

TEST_CASE("the same seed builds the same model") {
    const auto s = gradcheck_setup(2);
    const SpottingModel a(s.config, 9), b(s.config, 9), c(s.config, 10);
    CHECK(testing::values(a.scores(s.frames, s.detections)) == testing::values(b.scores(s.frames, s.detections)));
    CHECK(testing::values(a.scores(s.frames, s.detections)) != testing::values(c.scores(s.frames, s.detections)));
    CHECK(a.parameters().size() == b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters().entries()[i].first == b.parameters().entries()[i].first);
        CHECK(testing::values(a.parameters().entries()[i].second) ==
              testing::values(b.parameters().entries()[i].second));
    }
}

TEST_CASE("environment-only features replace the entity path with zeros") {
    auto s = gradcheck_setup(3);
    s.config.features = FeatureMode::env;
    const SpottingModel model(s.config, 3);
    const ForwardTrace trace = model.forward(s.frames, s.detections);
    for (double v : trace.ent.data()) CHECK(v == 0.0);

    DetectionsByFrame none(4);
    CHECK(testing::values(model.scores(s.frames, none)) == testing::values(trace.scores));
}

TEST_CASE("fused features depend on the detections") {
    const auto s = gradcheck_setup(4);
    const SpottingModel model(s.config, 4);
    DetectionsByFrame none(4);
    CHECK(testing::max_abs_diff(model.scores(s.frames, s.detections), model.scores(s.frames, none)) > 0.0);
}

TEST_CASE("the transformer encoder variant runs end to end") {
    auto s = gradcheck_setup(5);
    s.config.temporal.kind = TemporalKind::transformer;
    const SpottingModel model(s.config, 5);
    const Tensor scores = model.scores(s.frames, s.detections);
    CHECK(scores.shape() == Shape{4, 4});
    CHECK(model.parameters().contains("temporal.tf_norm1.gain"));
}

TEST_CASE("model config validation") {
    ModelConfig cfg = gradcheck_setup(0).config;
    CHECK_NOTHROW(cfg.validate());
    ModelConfig bad = cfg;
    bad.num_classes = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.backbone.feature_dim = 5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.entities.k_max = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(parse_feature_mode("fused") == FeatureMode::fused);
    CHECK(to_string(FeatureMode::env) == "env");
    CHECK_THROWS_AS(parse_feature_mode("both"), ConfigError);
}

TEST_CASE("input shape errors") {
    const auto s = gradcheck_setup(6);
    const SpottingModel model(s.config, 6);
    DetectionsByFrame extra = s.detections;
    extra.push_back({EntityDetection{4, Box{}, 0, 0.9}});
    CHECK_THROWS_AS(model.scores(s.frames, extra), IndexError);
    DetectionsByFrame fewer(s.detections.begin(), s.detections.begin() + 2);
    CHECK(model.scores(s.frames, fewer).shape() == Shape{4, 4});
    FrameSequence wrong;
    wrong.frames = Tensor::zeros({4, 1, 8, 8});
    CHECK_THROWS_AS(model.scores(wrong, s.detections), ShapeError);
}

TEST_CASE("end-to-end focal loss gradient matches finite differences") {
    const auto report = testing::full_model_gradcheck(11);
    CHECK(report.coordinates > 1000);
    CHECK(report.max_relative_error <= 1e-4);
}
