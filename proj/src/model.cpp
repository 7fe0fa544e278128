#include "spotkit/model.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

namespace spotkit {

std::string to_string(FeatureMode mode) { return mode == FeatureMode::env ? "env" : "fused"; }

FeatureMode parse_feature_mode(const std::string& text) {
    if (text == "fused") return FeatureMode::fused;
    if (text == "env") return FeatureMode::env;
    throw ConfigError("features must be 'fused' or 'env', got '" + text + "'");
}

void ModelConfig::validate() const {
    backbone.validate();
    temporal.validate();
    if (num_classes < 1) throw ConfigError("model.num_classes must be at least 1");
    if (entities.k_max < 1) throw ConfigError("entities.k_max must be at least 1");
    if (entities.roi.out_size < 1 || entities.roi.samples_per_bin < 1) {
        throw ConfigError("entities.roi_size and entities.roi_samples must be positive");
    }
}

namespace {

const ModelConfig& checked(const ModelConfig& cfg) {
    cfg.validate();
    return cfg;
}

} // namespace

SpottingModel::SpottingModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(checked(cfg)) {
    const Rng root(seed);
    const std::size_t d = cfg_.backbone.feature_dim;
    backbone_ = Backbone(cfg_.backbone, store_, root.split("backbone"));
    entities_ = EntityEncoder(d, cfg_.entities, store_, root.split("entities"));
    aam_ = AdaptiveAttention(d, cfg_.entities.k_max, store_, root.split("aam"));
    fusion_ = FusionAttention(d, store_, root.split("fusion"));
    temporal_ = TemporalEncoder(d, cfg_.temporal, store_, root.split("temporal"));
    classifier_ = FrameClassifier(cfg_.temporal.hidden, cfg_.num_classes, store_, root.split("classifier"));
}

ForwardTrace SpottingModel::forward(const FrameSequence& snippet, const DetectionsByFrame& detections) const {
    ForwardTrace trace;
    trace.maps = backbone_.encode_frames(snippet);
    trace.env = backbone_.global_env_feature(trace.maps);
    const std::size_t t_len = trace.maps.length();
    const std::size_t d = cfg_.backbone.feature_dim;

    if (cfg_.features == FeatureMode::env) {
        trace.ent = Tensor::zeros({t_len, d});
    } else {
        const auto set = entities_.entity_features(trace.maps, detections);
        std::vector<Tensor> rows;
        rows.reserve(t_len);
        for (std::size_t t = 0; t < t_len; ++t) rows.push_back(aam_.attend(set.features[t], slice(trace.env, 0, t, 1)));
        trace.ent = concat(rows, 0);
    }
    trace.fused = fusion_.fuse(trace.env, trace.ent);
    trace.hidden = temporal_.temporal_encode(trace.fused);
    trace.logits = classifier_.logits(trace.hidden);
    trace.scores = softmax(trace.logits, 1);
    return trace;
}

Tensor SpottingModel::scores(const FrameSequence& snippet, const DetectionsByFrame& detections) const {
    return forward(snippet, detections).scores;
}

} // namespace spotkit
