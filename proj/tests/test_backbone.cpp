#include "spotkit/backbone.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/gradcheck.hpp"
#include "spotkit/ops.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace spotkit;
using namespace spotkit::testing;

namespace {

// Frame t, channel c holds the constant 10 t + c.
Tensor labelled_maps(std::size_t t_len, std::size_t c_len, std::size_t h, std::size_t w) {
    std::vector<double> v(t_len * c_len * h * w);
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t c = 0; c < c_len; ++c)
            for (std::size_t p = 0; p < h * w; ++p) v[(t * c_len + c) * h * w + p] = 10.0 * t + c + 1.0;
    return Tensor::from({t_len, c_len, h, w}, std::move(v));
}

double at4(const Tensor& x, std::size_t t, std::size_t c, std::size_t p) {
    const std::size_t plane = x.dim(2) * x.dim(3);
    return x[(t * x.dim(1) + c) * plane + p];
}

BackboneConfig tiny_config(GateKind gate) {
    BackboneConfig cfg;
    cfg.in_channels = 2;
    cfg.widths = {4, 4};
    cfg.shift_fraction = 0.25;
    cfg.gate = gate;
    cfg.feature_dim = 4;
    return cfg;
}

} // namespace

TEST_CASE("gate_shift: time-constant input keeps interior frames") {
    Rng rng(3);
    const Tensor frame = random_tensor({1, 8, 3, 3}, rng);
    const Tensor maps = concat({frame, frame, frame, frame, frame}, 0);
    BackboneConfig cfg;
    cfg.gate = GateKind::none;
    const auto out = gate_shift({maps, 2.0}, cfg);
    for (std::size_t t = 1; t + 1 < 5; ++t)
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t p = 0; p < 9; ++p) CHECK(at4(out.maps, t, c, p) == at4(maps, t, c, p));
    CHECK(out.fps == 2.0);
}

TEST_CASE("gate_shift: a single frame zeroes both shifted blocks") {
    Rng rng(4);
    const Tensor maps = random_tensor({1, 8, 2, 2}, rng);
    BackboneConfig cfg;
    cfg.gate = GateKind::none;
    const auto out = gate_shift({maps, 1.0}, cfg);
    for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t p = 0; p < 4; ++p) CHECK(at4(out.maps, 0, c, p) == (c < 2 ? 0.0 : at4(maps, 0, c, p)));
}

TEST_CASE("gate_shift: two frames, four channels, explicit index permutation") {
    const Tensor maps = labelled_maps(2, 4, 2, 2);
    BackboneConfig cfg;
    cfg.shift_fraction = 0.25;
    cfg.gate = GateKind::none;
    const auto out = gate_shift({maps, 1.0}, cfg);
    // Channel 0 comes from t-1, channel 1 from t+1, channels 2 and 3 stay.
    const double expected[2][4] = {{0.0, 12.0, 3.0, 4.0}, {1.0, 0.0, 13.0, 14.0}};
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t p = 0; p < 4; ++p) CHECK(at4(out.maps, t, c, p) == expected[t][c]);
}

TEST_CASE("gate_shift: empty sequence is rejected") {
    BackboneConfig cfg;
    CHECK_THROWS_AS(gate_shift({Tensor{}, 1.0}, cfg), EmptyInputError);
}

TEST_CASE("gate_shift: learned gate matches a per-pixel loop") {
    Rng rng(11);
    const std::size_t t_len = 3, c_len = 8, s = 2, plane = 4;
    const Tensor x = random_tensor({t_len, c_len, 2, 2}, rng);
    ShiftGate gate{random_tensor({2 * s, c_len, 1, 1}, rng), random_tensor({2 * s}, rng)};
    const auto out = gate_shift({x, 1.0}, s, &gate);

    const auto gated = [&](std::size_t t, std::size_t j, std::size_t p) {
        double z = gate.bias[j];
        for (std::size_t c = 0; c < c_len; ++c) z += gate.kernel[j * c_len + c] * at4(x, t, c, p);
        return std::tanh(z) * at4(x, t, j, p);
    };
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t c = 0; c < c_len; ++c)
            for (std::size_t p = 0; p < plane; ++p) {
                double expected = at4(x, t, c, p);
                if (c < 2 * s) {
                    const long src = c < s ? static_cast<long>(t) - 1 : static_cast<long>(t) + 1;
                    const double moved =
                        src >= 0 && src < static_cast<long>(t_len) ? gated(static_cast<std::size_t>(src), c, p) : 0.0;
                    expected = moved + at4(x, t, c, p) - gated(t, c, p);
                }
                CHECK(at4(out.maps, t, c, p) == doctest::Approx(expected).epsilon(1e-12));
            }
}

TEST_CASE("gate_shift: ungated shift never increases the norm") {
    Rng rng(5);
    BackboneConfig cfg;
    cfg.gate = GateKind::none;
    for (int trial = 0; trial < 10; ++trial) {
        const Tensor x = random_tensor({1 + rng.below(5), 16, 3, 3}, rng, -3.0, 3.0);
        const auto out = gate_shift({x, 1.0}, cfg);
        double in_sq = 0.0, out_sq = 0.0;
        for (double v : x.data()) in_sq += v * v;
        for (double v : out.maps.data()) out_sq += v * v;
        CHECK(out_sq <= in_sq);
    }
}

TEST_CASE("gate_shift: untouched channel block is bit-exact") {
    Rng rng(6);
    const Tensor x = random_tensor({4, 16, 2, 3}, rng);
    ShiftGate gate{random_tensor({4, 16, 1, 1}, rng), random_tensor({4}, rng)};
    for (const ShiftGate* g : {static_cast<const ShiftGate*>(nullptr), static_cast<const ShiftGate*>(&gate)}) {
        const auto out = gate_shift({x, 1.0}, 2, g);
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t c = 4; c < 16; ++c)
                for (std::size_t p = 0; p < 6; ++p) CHECK(at4(out.maps, t, c, p) == at4(x, t, c, p));
    }
}

TEST_CASE("backbone config validation") {
    BackboneConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.shifted_channels(16) == 2);
    cfg.feature_dim = 32;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = BackboneConfig{};
    cfg.widths = {12, 32, 64};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK(parse_gate_kind("none") == GateKind::none);
    CHECK(parse_gate_kind(to_string(GateKind::learned_tanh)) == GateKind::learned_tanh);
    CHECK_THROWS_AS(parse_gate_kind("sigmoid"), ConfigError);
}

TEST_CASE("encode_frames: zero input gives zero output") {
    ParameterStore store;
    const Backbone backbone(tiny_config(GateKind::learned_tanh), store, Rng(1));
    const auto out = backbone.encode_frames({Tensor::zeros({3, 2, 8, 8}), 2.0});
    CHECK(out.maps.shape() == Shape{3, 4, 2, 2});
    for (double v : out.maps.data()) CHECK(v == 0.0);
}

TEST_CASE("encode_frames: 224x224 input through three stride-2 stages") {
    ParameterStore store;
    const Backbone backbone(BackboneConfig{}, store, Rng(2));
    Rng rng(9);
    const auto out = backbone.encode_frames({random_tensor({1, 3, 224, 224}, rng), 25.0});
    CHECK(out.maps.shape() == Shape{1, 64, 28, 28});
    CHECK(backbone.global_env_feature(out).shape() == Shape{1, 64});
}

TEST_CASE("encode_frames: errors") {
    ParameterStore store;
    const Backbone backbone(tiny_config(GateKind::none), store, Rng(1));
    CHECK_THROWS_AS(backbone.encode_frames({Tensor::zeros({2, 2, 2, 2}), 1.0}), ConfigError);
    CHECK_THROWS_AS(backbone.encode_frames({Tensor::zeros({2, 3, 8, 8}), 1.0}), ShapeError);
    CHECK_THROWS_AS(backbone.encode_frames({Tensor{}, 1.0}), EmptyInputError);
}

TEST_CASE("encode_frames: finite-difference gradient of the mean output") {
    for (auto gate : {GateKind::learned_tanh, GateKind::none}) {
        ParameterStore store;
        const Backbone backbone(tiny_config(gate), store, Rng(7));
        Rng rng(8);
        const Tensor input = random_tensor({3, 2, 8, 8}, rng, -1.0, 1.0, true);
        std::vector<Tensor> leaves{input};
        for (const auto& t : store.tensors()) leaves.push_back(t);
        const auto report = finite_difference_check(
            [&] { return mean(backbone.encode_frames({input, 1.0}).maps); }, leaves);
        CHECK(report.max_relative_error <= 1e-4);
        CHECK(report.coordinates > 384);
    }
}

TEST_CASE("encode_frames: translation-equivariant in time without a gate") {
    ParameterStore store;
    const Backbone backbone(tiny_config(GateKind::none), store, Rng(12));
    Rng rng(13);
    const std::size_t t_len = 8, layers = 2;
    const Tensor x = random_tensor({t_len, 2, 8, 8}, rng);
    const auto full = backbone.encode_frames({x, 1.0}).maps;
    const auto shifted = backbone.encode_frames({slice(x, 0, 1, t_len - 1), 1.0}).maps;
    const std::size_t plane = full.dim(1) * full.dim(2) * full.dim(3);
    for (std::size_t t = layers; t + layers < t_len - 1; ++t)
        for (std::size_t i = 0; i < plane; ++i)
            CHECK(shifted[t * plane + i] == doctest::Approx(full[(t + 1) * plane + i]).epsilon(1e-12));
}

TEST_CASE("global_env_feature: constant map with identity projection") {
    ParameterStore store;
    const Backbone backbone(tiny_config(GateKind::none), store, Rng(1));
    Tensor w = backbone.projection().weight;
    set_identity(w);
    const auto f = backbone.global_env_feature({Tensor::full({2, 4, 3, 3}, 0.75), 1.0});
    CHECK(f.shape() == Shape{2, 4});
    for (double v : f.data()) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("global_env_feature: naive loop oracle and spatial permutation invariance") {
    ParameterStore store;
    const Backbone backbone(tiny_config(GateKind::none), store, Rng(21));
    Tensor b = backbone.projection().bias;
    Rng rng(22);
    assign(b, values(random_tensor({4}, rng)));
    const Tensor maps = random_tensor({3, 4, 3, 5}, rng);
    const auto f = backbone.global_env_feature({maps, 1.0});

    const auto& weight = backbone.projection().weight;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = b[o];
            for (std::size_t c = 0; c < 4; ++c) {
                double m = 0.0;
                for (std::size_t p = 0; p < 15; ++p) m += at4(maps, t, c, p);
                acc += m / 15.0 * weight[c * 4 + o];
            }
            CHECK(f.at(t, o) == doctest::Approx(acc).epsilon(1e-12));
        }

    // Reverse the pixel order of every plane.
    std::vector<double> permuted(maps.size());
    for (std::size_t tc = 0; tc < 12; ++tc)
        for (std::size_t p = 0; p < 15; ++p) permuted[tc * 15 + p] = maps[tc * 15 + 14 - p];
    const auto g = backbone.global_env_feature({Tensor::from(maps.shape(), permuted), 1.0});
    CHECK(max_abs_diff(f, g) <= 1e-12);
}
