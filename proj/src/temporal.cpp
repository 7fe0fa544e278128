#include "spotkit/temporal.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

#include <cmath>

namespace spotkit {

std::string to_string(TemporalKind kind) { return kind == TemporalKind::bigru ? "bigru" : "transformer"; }

TemporalKind parse_temporal_kind(const std::string& text) {
    if (text == "bigru") return TemporalKind::bigru;
    if (text == "transformer" || text == "transformer-encoder") return TemporalKind::transformer;
    throw ConfigError("temporal kind must be 'bigru' or 'transformer', got '" + text + "'");
}

void TemporalEncoderConfig::validate() const {
    if (hidden == 0 || hidden % 2 != 0) throw ConfigError("temporal.hidden must be a positive even number");
    if (kind == TemporalKind::transformer && (heads == 0 || hidden % heads != 0)) {
        throw ConfigError("temporal.heads must divide temporal.hidden");
    }
}

GruCell::GruCell(ParameterStore& store, const std::string& name, std::size_t input, std::size_t hidden, const Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    input_weight = store.add(name + ".input_weight", uniform_init({input, 3 * hidden}, bound, rng.split(name + ".wi")));
    input_bias = store.add(name + ".input_bias", Tensor::zeros({3 * hidden}));
    hidden_weight = store.add(name + ".hidden_weight", uniform_init({hidden, 3 * hidden}, bound, rng.split(name + ".wh")));
    hidden_bias = store.add(name + ".hidden_bias", Tensor::zeros({3 * hidden}));
}

namespace {

Tensor gru_update(const Tensor& xi, const Tensor& h, const GruCell& cell) {
    const std::size_t hs = cell.hidden_size();
    const Tensor hh = add(matmul(h, cell.hidden_weight), cell.hidden_bias);
    const Tensor rz = sigmoid(add(slice(xi, 1, 0, 2 * hs), slice(hh, 1, 0, 2 * hs)));
    const Tensor r = slice(rz, 1, 0, hs);
    const Tensor z = slice(rz, 1, hs, hs);
    const Tensor n = tanh(add(slice(xi, 1, 2 * hs, hs), mul(r, slice(hh, 1, 2 * hs, hs))));
    return add(n, mul(z, sub(h, n)));
}

} // namespace

Tensor GruCell::step(const Tensor& x, const Tensor& h) const {
    return gru_update(add(matmul(x, input_weight), input_bias), h, *this);
}

Tensor GruCell::run(const Tensor& seq, bool reverse) const {
    if (seq.rank() != 2 || seq.dim(1) != input_weight.dim(0)) {
        throw ShapeError("gru: expected [T x " + std::to_string(input_weight.dim(0)) + "], got " + to_string(seq.shape()));
    }
    const std::size_t t_len = seq.dim(0);
    const Tensor projected = add(matmul(seq, input_weight), input_bias);
    Tensor h = Tensor::zeros({1, hidden_size()});
    std::vector<Tensor> states(t_len);
    for (std::size_t i = 0; i < t_len; ++i) {
        const std::size_t t = reverse ? t_len - 1 - i : i;
        h = gru_update(slice(projected, 0, t, 1), h, *this);
        states[t] = h;
    }
    return concat(states, 0);
}

BiGru::BiGru(std::size_t input, std::size_t hidden, ParameterStore& store, const Rng& rng)
    : forward_(store, "temporal.gru_forward", input, hidden / 2, rng),
      backward_(store, "temporal.gru_backward", input, hidden / 2, rng) {}

Tensor BiGru::encode(const Tensor& seq) const {
    if (!seq.defined() || seq.rank() != 2 || seq.dim(0) == 0) throw EmptyInputError("temporal_encode needs at least one frame");
    return concat({forward_.run(seq, false), backward_.run(seq, true)}, 1);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
    Buffer pe(length * dim);
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t i = 0; i < dim; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
            const double angle = static_cast<double>(t) * freq;
            pe[t * dim + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from({length, dim}, std::move(pe));
}

TransformerEncoder::TransformerEncoder(std::size_t input, std::size_t hidden, std::size_t heads, ParameterStore& store,
                                       const Rng& rng)
    : hidden_(hidden),
      heads_(heads),
      input_(store, "temporal.tf_input", input, hidden, rng),
      query_(store, "temporal.tf_query", hidden, hidden, rng),
      key_(store, "temporal.tf_key", hidden, hidden, rng),
      value_(store, "temporal.tf_value", hidden, hidden, rng),
      output_(store, "temporal.tf_output", hidden, hidden, rng),
      ff1_(store, "temporal.tf_ff1", hidden, 2 * hidden, rng),
      ff2_(store, "temporal.tf_ff2", 2 * hidden, hidden, rng) {
    norm1_gain_ = store.add("temporal.tf_norm1.gain", Tensor::full({hidden}, 1.0));
    norm1_bias_ = store.add("temporal.tf_norm1.bias", Tensor::zeros({hidden}));
    norm2_gain_ = store.add("temporal.tf_norm2.gain", Tensor::full({hidden}, 1.0));
    norm2_bias_ = store.add("temporal.tf_norm2.bias", Tensor::zeros({hidden}));
}

Tensor TransformerEncoder::encode(const Tensor& seq) const {
    if (!seq.defined() || seq.rank() != 2 || seq.dim(0) == 0) throw EmptyInputError("temporal_encode needs at least one frame");
    const std::size_t t_len = seq.dim(0);
    const Tensor x = add(input_(seq), sinusoidal_positions(t_len, hidden_));
    const Tensor q = query_(x);
    const Tensor k = key_(x);
    const Tensor v = value_(x);
    const std::size_t dk = hidden_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Tensor> heads;
    for (std::size_t h = 0; h < heads_; ++h) {
        const Tensor qh = slice(q, 1, h * dk, dk);
        const Tensor kh = slice(k, 1, h * dk, dk);
        const Tensor vh = slice(v, 1, h * dk, dk);
        heads.push_back(matmul(softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1), vh));
    }
    const Tensor attn = output_(concat(heads, 1));
    const Tensor x1 = add(mul(layer_norm(add(x, attn)), norm1_gain_), norm1_bias_);
    const Tensor ff = ff2_(relu(ff1_(x1)));
    return add(mul(layer_norm(add(x1, ff)), norm2_gain_), norm2_bias_);
}

TemporalEncoder::TemporalEncoder(std::size_t input, const TemporalEncoderConfig& cfg, ParameterStore& store,
                                 const Rng& rng)
    : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.kind == TemporalKind::bigru) {
        bigru_ = BiGru(input, cfg_.hidden, store, rng);
    } else {
        transformer_ = TransformerEncoder(input, cfg_.hidden, cfg_.heads, store, rng);
    }
}

Tensor TemporalEncoder::temporal_encode(const Tensor& seq) const {
    return cfg_.kind == TemporalKind::bigru ? bigru_.encode(seq) : transformer_.encode(seq);
}

FrameClassifier::FrameClassifier(std::size_t hidden, std::size_t num_classes, ParameterStore& store, const Rng& rng)
    : layer_(store, "classifier", hidden, num_classes + 1, rng) {}

Tensor FrameClassifier::logits(const Tensor& hidden) const { return layer_(hidden); }

Tensor FrameClassifier::classify(const Tensor& hidden) const { return softmax(logits(hidden), 1); }

} // namespace spotkit
