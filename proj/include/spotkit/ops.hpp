#pragma once

#include "spotkit/tensor.hpp"

#include <cstddef>
#include <vector>

namespace spotkit {

// C = A * B for A [m x k], B [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Binary ops broadcast only along leading axes: the smaller operand's shape
// must equal the trailing suffix of the larger one.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Subgradient at 0 is 0.
Tensor relu(const Tensor& x);
// Throws DomainError on any nonpositive entry.
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);

enum class UnaryOp { sigmoid, tanh, relu, log, exp };
enum class BinaryOp { add, sub, mul };

Tensor elementwise(UnaryOp op, const Tensor& x);
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

enum class Reduction { mean, sum, max };

// Removes `axis` from the shape. Max routes the gradient to the first maximum.
Tensor reduce(Reduction op, const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Adds a new leading axis.
Tensor stack(const std::vector<Tensor>& parts);

// Rows of x [R x C] picked by index, in the given order.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);

// y[r, :] = x[r, :] * w[r] for x [R x C], w [R].
Tensor scale_rows(const Tensor& x, const Tensor& w);

// Normalizes each row of x [R x C] to zero mean, unit variance.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t pad = 0;
};

// Cross-correlation. input is [C_in x H x W] or [N x C_in x H x W];
// kernels [C_out x C_in x kh x kw]; bias, when defined, is [C_out].
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, Conv2dOptions options = {});
Tensor conv2d(const Tensor& input, const Tensor& kernels, Conv2dOptions options = {});

// Non-overlapping average pooling over the two trailing axes.
Tensor avg_pool2d(const Tensor& input, std::size_t window);

} // namespace spotkit
