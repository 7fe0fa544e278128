#pragma once

#include "spotkit/params.hpp"
#include "spotkit/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace spotkit {

// Frames of one snippet, [T x C x H x W], plus the source frame rate.
struct FrameSequence {
    Tensor frames;
    double fps = 1.0;

    std::size_t length() const { return frames.defined() ? frames.dim(0) : 0; }
};

// Per-frame feature maps, [T x C x h x w].
struct FeatureMapSequence {
    Tensor maps;
    double fps = 1.0;

    std::size_t length() const { return maps.defined() ? maps.dim(0) : 0; }
    std::size_t channels() const { return maps.dim(1); }
};

enum class GateKind { learned_tanh, none };

std::string to_string(GateKind kind);
GateKind parse_gate_kind(const std::string& text);

struct BackboneConfig {
    std::size_t in_channels = 3;
    std::vector<std::size_t> widths{16, 32, 64};
    std::size_t kernel = 3;
    std::size_t downsample = 2;
    // Fraction of channels shifted in each direction.
    double shift_fraction = 0.125;
    GateKind gate = GateKind::learned_tanh;
    std::size_t feature_dim = 64;

    // Throws ConfigError when a stage width does not split into whole shift
    // blocks or feature_dim differs from the last width.
    void validate() const;
    std::size_t shifted_channels(std::size_t width) const;
};

// 1x1 convolution producing one tanh gate per shifted channel.
struct ShiftGate {
    Tensor kernel;  // [2s x C x 1 x 1]
    Tensor bias;    // [2s]
};

// Channel block [0, fwd) takes frame t-1, block [fwd, fwd+bwd) takes frame
// t+1, the rest is copied. Missing neighbours at the ends are zeros.
Tensor time_shift(const Tensor& maps, std::size_t forward_channels, std::size_t backward_channels);

// Gate-shift over `shifted` channels per direction. Without a gate the two
// blocks are plain shifts. With a gate g = tanh(conv1x1(x)) the block becomes
// shift(g * x) + (x - g * x).
FeatureMapSequence gate_shift(const FeatureMapSequence& maps, std::size_t shifted, const ShiftGate* gate = nullptr);
FeatureMapSequence gate_shift(const FeatureMapSequence& maps, const BackboneConfig& cfg, const ShiftGate* gate = nullptr);

// Small 2D conv encoder with a gate-shift after every stage:
// conv -> relu -> gate_shift -> average-pool downsample.
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, ParameterStore& store, const Rng& rng);

    FeatureMapSequence encode_frames(const FrameSequence& snippet) const;
    // Spatial mean per frame then a D -> D projection; returns [T x D].
    Tensor global_env_feature(const FeatureMapSequence& maps) const;

    const BackboneConfig& config() const { return cfg_; }
    const Linear& projection() const { return projection_; }

private:
    struct Stage {
        Tensor kernel;
        Tensor bias;
        ShiftGate gate;
    };
    BackboneConfig cfg_;
    std::vector<Stage> stages_;
    Linear projection_;
};

// Spatial mean of [T x C x h x w] maps; returns [T x C].
Tensor spatial_mean(const Tensor& maps);

} // namespace spotkit
