#pragma once

#include "spotkit/params.hpp"
#include "spotkit/tensor.hpp"

#include <cstddef>
#include <string>

namespace spotkit {

enum class TemporalKind { bigru, transformer };

std::string to_string(TemporalKind kind);
TemporalKind parse_temporal_kind(const std::string& text);

struct TemporalEncoderConfig {
    TemporalKind kind = TemporalKind::bigru;
    std::size_t hidden = 128;
    std::size_t heads = 4;

    void validate() const;
};

// One GRU direction: r, z gates and a tanh candidate.
//   r = s(x Wir + bir + h Whr + bhr)
//   z = s(x Wiz + biz + h Whz + bhz)
//   n = tanh(x Win + bin + r * (h Whn + bhn))
//   h' = (1 - z) * n + z * h
struct GruCell {
    Tensor input_weight;   // [D x 3h], column blocks r | z | n
    Tensor input_bias;     // [3h]
    Tensor hidden_weight;  // [h x 3h]
    Tensor hidden_bias;    // [3h]

    GruCell() = default;
    GruCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden, const Rng& rng);

    std::size_t hidden_size() const { return hidden_weight.dim(0); }

    // Runs over the rows of seq [T x D] in the given direction from a zero
    // state; returns the states [T x h] in frame order.
    Tensor run(const Tensor& seq, bool reverse) const;
    // A single update: x [1 x D], h [1 x h] -> [1 x h].
    Tensor step(const Tensor& x, const Tensor& h) const;
};

// 1-layer bidirectional GRU. Output rows are [forward | backward].
class BiGru {
public:
    BiGru() = default;
    BiGru(std::size_t input, std::size_t hidden, ParameterStore& store, const Rng& rng);

    Tensor encode(const Tensor& seq) const;
    const GruCell& forward_cell() const { return forward_; }
    const GruCell& backward_cell() const { return backward_; }

private:
    GruCell forward_;
    GruCell backward_;
};

// Input projection, sinusoidal positions, then one post-norm block of
// multi-head self-attention and a ReLU feed-forward layer.
class TransformerEncoder {
public:
    TransformerEncoder() = default;
    TransformerEncoder(std::size_t input, std::size_t hidden, std::size_t heads, ParameterStore& store, const Rng& rng);

    Tensor encode(const Tensor& seq) const;

private:
    std::size_t hidden_ = 0;
    std::size_t heads_ = 1;
    Linear input_;
    Linear query_;
    Linear key_;
    Linear value_;
    Linear output_;
    Linear ff1_;
    Linear ff2_;
    Tensor norm1_gain_;
    Tensor norm1_bias_;
    Tensor norm2_gain_;
    Tensor norm2_bias_;
};

Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

class TemporalEncoder {
public:
    TemporalEncoder() = default;
    TemporalEncoder(std::size_t input, const TemporalEncoderConfig& cfg, ParameterStore& store, const Rng& rng);

    // seq [T x D] -> [T x H]
    Tensor temporal_encode(const Tensor& seq) const;
    const TemporalEncoderConfig& config() const { return cfg_; }
    const BiGru& bigru() const { return bigru_; }

private:
    TemporalEncoderConfig cfg_;
    BiGru bigru_;
    TransformerEncoder transformer_;
};

// Shared H -> K+1 layer followed by a per-row softmax. Column 0 is background.
class FrameClassifier {
public:
    FrameClassifier() = default;
    FrameClassifier(std::size_t hidden, std::size_t num_classes, ParameterStore& store, const Rng& rng);

    Tensor logits(const Tensor& hidden) const;
    Tensor classify(const Tensor& hidden) const;
    const Linear& layer() const { return layer_; }

private:
    Linear layer_;
};

} // namespace spotkit
