#pragma once

#include "spotkit/tensor.hpp"

namespace spotkit {

// Single-head self-attention with a residual connection:
//   Y = X + softmax(X Wq (X Wk)^T / sqrt(D)) X Wv
// for tokens X [n x D] and D x D projections.
Tensor self_attention(const Tensor& tokens, const Tensor& wq, const Tensor& wk, const Tensor& wv);

} // namespace spotkit
