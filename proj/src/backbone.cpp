#include "spotkit/backbone.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

#include <cmath>

namespace spotkit {

std::string to_string(GateKind kind) { return kind == GateKind::none ? "none" : "learned-tanh"; }

GateKind parse_gate_kind(const std::string& text) {
    if (text == "none") return GateKind::none;
    if (text == "learned-tanh") return GateKind::learned_tanh;
    throw ConfigError("gate kind must be 'learned-tanh' or 'none', got '" + text + "'");
}

void BackboneConfig::validate() const {
    if (in_channels == 0) throw ConfigError("backbone.in_channels must be positive");
    if (widths.empty()) throw ConfigError("backbone.widths must list at least one stage");
    if (kernel == 0 || kernel % 2 == 0) throw ConfigError("backbone.kernel must be odd");
    if (downsample == 0) throw ConfigError("backbone.downsample must be positive");
    if (!(shift_fraction >= 0.0 && shift_fraction <= 0.5)) {
        throw ConfigError("backbone.shift_fraction must lie in [0, 0.5]");
    }
    for (auto w : widths) {
        const double blocks = 2.0 * shift_fraction * static_cast<double>(w);
        if (w == 0 || std::abs(blocks - std::round(blocks)) > 1e-9 || std::lround(blocks) % 2 != 0) {
            throw ConfigError("backbone.shift_fraction " + std::to_string(shift_fraction) +
                              " does not split width " + std::to_string(w) + " into whole shift blocks");
        }
    }
    if (feature_dim != widths.back()) {
        throw ConfigError("backbone.feature_dim (" + std::to_string(feature_dim) + ") must equal the last stage width (" +
                          std::to_string(widths.back()) + ")");
    }
}

std::size_t BackboneConfig::shifted_channels(std::size_t width) const {
    return static_cast<std::size_t>(std::lround(shift_fraction * static_cast<double>(width)));
}

Tensor time_shift(const Tensor& maps, std::size_t forward_channels, std::size_t backward_channels) {
    if (maps.rank() != 4) throw ShapeError("time_shift expects [T x C x h x w], got " + to_string(maps.shape()));
    const std::size_t t_len = maps.dim(0);
    const std::size_t c_len = maps.dim(1);
    const std::size_t plane = maps.dim(2) * maps.dim(3);
    if (forward_channels + backward_channels > c_len) {
        throw ConfigError("time_shift: " + std::to_string(forward_channels + backward_channels) +
                          " shifted channels exceed " + std::to_string(c_len));
    }
    // Source frame for (t, c), or -1 for a zero fill.
    const auto source = [=](std::size_t t, std::size_t c) -> long {
        if (c < forward_channels) return static_cast<long>(t) - 1;
        if (c < forward_channels + backward_channels) {
            return t + 1 < t_len ? static_cast<long>(t) + 1 : -1;
        }
        return static_cast<long>(t);
    };
    const auto in = maps.data();
    Buffer out(in.size(), 0.0);
    for (std::size_t t = 0; t < t_len; ++t) {
        for (std::size_t c = 0; c < c_len; ++c) {
            const long s = source(t, c);
            if (s < 0) continue;
            const double* src = in.data() + (static_cast<std::size_t>(s) * c_len + c) * plane;
            std::copy(src, src + plane, out.begin() + static_cast<std::ptrdiff_t>((t * c_len + c) * plane));
        }
    }
    return Tensor::make(maps.shape(), std::move(out), {maps}, "time_shift", [=](detail::Node& o) {
        auto& parent = *o.parents[0];
        if (!parent.requires_grad) return;
        for (std::size_t t = 0; t < t_len; ++t) {
            for (std::size_t c = 0; c < c_len; ++c) {
                const long s = source(t, c);
                if (s < 0) continue;
                double* dst = parent.grad.data() + (static_cast<std::size_t>(s) * c_len + c) * plane;
                const double* g = o.grad.data() + (t * c_len + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) dst[i] += g[i];
            }
        }
    });
}

FeatureMapSequence gate_shift(const FeatureMapSequence& maps, std::size_t shifted, const ShiftGate* gate) {
    if (!maps.maps.defined() || maps.length() == 0) throw EmptyInputError("gate_shift on an empty sequence");
    const Tensor& x = maps.maps;
    const std::size_t channels = x.dim(1);
    if (2 * shifted > channels) {
        throw ConfigError("gate_shift: 2 x " + std::to_string(shifted) + " shifted channels exceed " +
                          std::to_string(channels));
    }
    if (shifted == 0) return maps;
    if (gate == nullptr) return {time_shift(x, shifted, shifted), maps.fps};

    const Tensor block = slice(x, 1, 0, 2 * shifted);
    const Tensor g = tanh(conv2d(x, gate->kernel, gate->bias));
    const Tensor gated = mul(g, block);
    const Tensor moved = add(time_shift(gated, shifted, shifted), sub(block, gated));
    if (2 * shifted == channels) return {moved, maps.fps};
    return {concat({moved, slice(x, 1, 2 * shifted, channels - 2 * shifted)}, 1), maps.fps};
}

FeatureMapSequence gate_shift(const FeatureMapSequence& maps, const BackboneConfig& cfg, const ShiftGate* gate) {
    if (!maps.maps.defined() || maps.length() == 0) throw EmptyInputError("gate_shift on an empty sequence");
    return gate_shift(maps, cfg.shifted_channels(maps.channels()), cfg.gate == GateKind::none ? nullptr : gate);
}

Backbone::Backbone(const BackboneConfig& cfg, ParameterStore& store, const Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = cfg_.in_channels;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
        const std::size_t out = cfg_.widths[i];
        const std::string name = "backbone.stage" + std::to_string(i);
        Stage stage;
        const double fan_in = static_cast<double>(in * cfg_.kernel * cfg_.kernel);
        stage.kernel = store.add(name + ".conv.weight", normal_init({out, in, cfg_.kernel, cfg_.kernel},
                                                                    std::sqrt(2.0 / fan_in), rng.split(name + ".conv")));
        stage.bias = store.add(name + ".conv.bias", Tensor::zeros({out}));
        const std::size_t shifted = cfg_.shifted_channels(out);
        if (cfg_.gate == GateKind::learned_tanh && shifted > 0) {
            const double bound = std::sqrt(6.0 / static_cast<double>(out + 2 * shifted));
            stage.gate.kernel = store.add(name + ".gate.weight",
                                          uniform_init({2 * shifted, out, 1, 1}, bound, rng.split(name + ".gate")));
            stage.gate.bias = store.add(name + ".gate.bias", Tensor::zeros({2 * shifted}));
        }
        stages_.push_back(std::move(stage));
        in = out;
    }
    projection_ = Linear(store, "backbone.projection", cfg_.feature_dim, cfg_.feature_dim, rng);
}

FeatureMapSequence Backbone::encode_frames(const FrameSequence& snippet) const {
    if (!snippet.frames.defined() || snippet.length() == 0) throw EmptyInputError("encode_frames on an empty snippet");
    const Tensor& frames = snippet.frames;
    if (frames.rank() != 4 || frames.dim(1) != cfg_.in_channels) {
        throw ShapeError("encode_frames expects [T x " + std::to_string(cfg_.in_channels) + " x H x W], got " +
                         to_string(frames.shape()));
    }
    FeatureMapSequence maps{frames, snippet.fps};
    for (const auto& stage : stages_) {
        const std::size_t h = maps.maps.dim(2);
        const std::size_t w = maps.maps.dim(3);
        if (h < cfg_.kernel || w < cfg_.kernel) {
            throw ConfigError("encode_frames: spatial extent " + std::to_string(h) + "x" + std::to_string(w) +
                              " is smaller than the " + std::to_string(cfg_.kernel) + "x" +
                              std::to_string(cfg_.kernel) + " kernel");
        }
        const Tensor conv = conv2d(maps.maps, stage.kernel, stage.bias, Conv2dOptions{1, cfg_.kernel / 2});
        maps = gate_shift({relu(conv), snippet.fps}, cfg_, stage.gate.kernel.defined() ? &stage.gate : nullptr);
        if (cfg_.downsample > 1) maps.maps = avg_pool2d(maps.maps, cfg_.downsample);
    }
    return maps;
}

Tensor spatial_mean(const Tensor& maps) {
    if (maps.rank() != 4) throw ShapeError("spatial_mean expects [T x C x h x w], got " + to_string(maps.shape()));
    return reduce(Reduction::mean, reshape(maps, {maps.dim(0), maps.dim(1), maps.dim(2) * maps.dim(3)}), 2);
}

Tensor Backbone::global_env_feature(const FeatureMapSequence& maps) const {
    if (!maps.maps.defined() || maps.length() == 0) throw EmptyInputError("global_env_feature on empty maps");
    return projection_(spatial_mean(maps.maps));
}

} // namespace spotkit
