#pragma once

#include "spotkit/backbone.hpp"
#include "spotkit/entities.hpp"
#include "spotkit/fusion.hpp"
#include "spotkit/params.hpp"
#include "spotkit/temporal.hpp"

#include <cstddef>
#include <cstdint>
#include <string>

namespace spotkit {

// Which per-frame feature feeds the temporal encoder.
//   fused: f^Ent-Env from the environment and entity paths
//   env:   the entity path is skipped and f^Ent is replaced by zeros
enum class FeatureMode { fused, env };

std::string to_string(FeatureMode mode);
FeatureMode parse_feature_mode(const std::string& text);

struct ModelConfig {
    BackboneConfig backbone;
    EntityConfig entities;
    TemporalEncoderConfig temporal;
    std::size_t num_classes = 5;
    FeatureMode features = FeatureMode::fused;

    void validate() const;
};

// Intermediate tensors of one forward pass, kept for inspection and tests.
struct ForwardTrace {
    FeatureMapSequence maps;
    Tensor env;      // [T x D]
    Tensor ent;      // [T x D]
    Tensor fused;    // [T x D]
    Tensor hidden;   // [T x H]
    Tensor logits;   // [T x (K+1)]
    Tensor scores;   // [T x (K+1)], rows sum to one
};

// Full snippet model: backbone -> (entities + AAM) -> fusion -> temporal
// encoder -> per-frame (K+1)-way softmax.
class SpottingModel {
public:
    SpottingModel(const ModelConfig& cfg, std::uint64_t seed);

    SpottingModel(const SpottingModel&) = delete;
    SpottingModel& operator=(const SpottingModel&) = delete;

    ForwardTrace forward(const FrameSequence& snippet, const DetectionsByFrame& detections) const;
    // Shorthand for forward(...).scores.
    Tensor scores(const FrameSequence& snippet, const DetectionsByFrame& detections) const;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& parameters() { return store_; }
    const ParameterStore& parameters() const { return store_; }

    const Backbone& backbone() const { return backbone_; }
    const EntityEncoder& entity_encoder() const { return entities_; }
    const AdaptiveAttention& adaptive_attention() const { return aam_; }
    const FusionAttention& fusion() const { return fusion_; }
    const TemporalEncoder& temporal() const { return temporal_; }
    const FrameClassifier& classifier() const { return classifier_; }

private:
    ModelConfig cfg_;
    ParameterStore store_;
    Backbone backbone_;
    EntityEncoder entities_;
    AdaptiveAttention aam_;
    FusionAttention fusion_;
    TemporalEncoder temporal_;
    FrameClassifier classifier_;
};

} // namespace spotkit
