#include "spotkit/attention.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

#include <cmath>

namespace spotkit {

Tensor self_attention(const Tensor& tokens, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
    if (tokens.rank() != 2) throw ShapeError("self_attention expects [n x D] tokens, got " + to_string(tokens.shape()));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(tokens.dim(1)));
    const Tensor q = matmul(tokens, wq);
    const Tensor k = matmul(tokens, wk);
    const Tensor v = matmul(tokens, wv);
    const Tensor weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt_d), 1);
    return add(tokens, matmul(weights, v));
}

} // namespace spotkit
