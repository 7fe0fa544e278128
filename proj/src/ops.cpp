#include "spotkit/ops.hpp"

#include "spotkit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace spotkit {

namespace {

using detail::Node;

// Grad buffer of parent i, or nullptr when that parent is a constant.
double* grad_of(Node& out, std::size_t i) {
    auto& parent = *out.parents[i];
    return parent.requires_grad ? parent.grad.data() : nullptr;
}

const double* data_of(Node& out, std::size_t i) { return out.parents[i]->data.data(); }

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename Forward, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Forward f, DA da, DB db) {
    const bool a_big = is_suffix(b.shape(), a.shape());
    if (!a_big && !is_suffix(a.shape(), b.shape())) {
        throw ShapeError(std::string(name) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " are not trailing-axis compatible");
    }
    const Shape out_shape = a_big ? a.shape() : b.shape();
    const std::size_t n = numel(out_shape);
    const std::size_t na = a.size();
    const std::size_t nb = b.size();
    Buffer out(n);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = f(ad[i % na], bd[i % nb]);
    return Tensor::make(out_shape, std::move(out), {a, b}, name, [n, na, nb, da, db](Node& o) {
        const double* x = data_of(o, 0);
        const double* y = data_of(o, 1);
        if (double* ga = grad_of(o, 0)) {
            for (std::size_t i = 0; i < n; ++i) ga[i % na] += o.grad[i] * da(x[i % na], y[i % nb]);
        }
        if (double* gb = grad_of(o, 1)) {
            for (std::size_t i = 0; i < n; ++i) gb[i % nb] += o.grad[i] * db(x[i % na], y[i % nb]);
        }
    });
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, const char* name, Forward f, Derivative df) {
    const auto xd = x.data();
    Buffer out(xd.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
    return Tensor::make(x.shape(), std::move(out), {x}, name, [df](Node& o) {
        double* g = grad_of(o, 0);
        if (!g) return;
        const double* in = data_of(o, 0);
        for (std::size_t i = 0; i < o.data.size(); ++i) g[i] += o.grad[i] * df(in[i], o.data[i]);
    });
}

void require_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " + to_string(t.shape()));
    }
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
    }
    const auto m = static_cast<Eigen::Index>(a.shape()[0]);
    const auto k = static_cast<Eigen::Index>(a.shape()[1]);
    const auto n = static_cast<Eigen::Index>(b.shape()[1]);
    Buffer out(static_cast<std::size_t>(m * n));
    MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
    return Tensor::make({a.shape()[0], b.shape()[1]}, std::move(out), {a, b}, "matmul", [m, k, n](Node& o) {
        ConstMatrixMap g(o.grad.data(), m, n);
        if (double* ga = grad_of(o, 0)) {
            MatrixMap(ga, m, k).noalias() += g * ConstMatrixMap(data_of(o, 1), k, n).transpose();
        }
        if (double* gb = grad_of(o, 1)) {
            MatrixMap(gb, k, n).noalias() += ConstMatrixMap(data_of(o, 0), m, k).transpose() * g;
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const auto r = static_cast<Eigen::Index>(a.shape()[0]);
    const auto c = static_cast<Eigen::Index>(a.shape()[1]);
    Buffer out(a.size());
    MatrixMap(out.data(), c, r) = a.matrix().transpose();
    return Tensor::make({a.shape()[1], a.shape()[0]}, std::move(out), {a}, "transpose", [r, c](Node& o) {
        if (double* g = grad_of(o, 0)) MatrixMap(g, r, c) += ConstMatrixMap(o.grad.data(), c, r).transpose();
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(
        a, "scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
    return unary(
        a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, "sigmoid",
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (!(v > 0.0)) throw DomainError("log of nonpositive value " + std::to_string(v));
    }
    return unary(
        x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary(
        x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor elementwise(UnaryOp op, const Tensor& x) {
    switch (op) {
    case UnaryOp::sigmoid: return sigmoid(x);
    case UnaryOp::tanh: return tanh(x);
    case UnaryOp::relu: return relu(x);
    case UnaryOp::log: return log(x);
    case UnaryOp::exp: return exp(x);
    }
    throw ContractError("unknown unary op");
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
    switch (op) {
    case BinaryOp::add: return add(a, b);
    case BinaryOp::sub: return sub(a, b);
    case BinaryOp::mul: return mul(a, b);
    }
    throw ContractError("unknown binary op");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto s = split_axis(x.shape(), axis);
    const auto xd = x.data();
    Buffer out(xd.size());
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xd[base + k * s.inner]);
            double total = 0.0;
            for (std::size_t k = 0; k < s.extent; ++k) {
                const double e = std::exp(xd[base + k * s.inner] - mx);
                out[base + k * s.inner] = e;
                total += e;
            }
            for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= total;
        }
    }
    return Tensor::make(x.shape(), std::move(out), {x}, "softmax", [s](Node& o) {
        double* g = grad_of(o, 0);
        if (!g) return;
        for (std::size_t ou = 0; ou < s.outer; ++ou) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = ou * s.extent * s.inner + in;
                double dot = 0.0;
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const auto i = base + k * s.inner;
                    dot += o.grad[i] * o.data[i];
                }
                for (std::size_t k = 0; k < s.extent; ++k) {
                    const auto i = base + k * s.inner;
                    g[i] += o.data[i] * (o.grad[i] - dot);
                }
            }
        }
    });
}

Tensor reduce(Reduction op, const Tensor& x, std::size_t axis) {
    const auto s = split_axis(x.shape(), axis);
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    const auto xd = x.data();
    Buffer out(s.outer * s.inner, 0.0);
    std::vector<std::size_t> arg;
    if (op == Reduction::max) arg.assign(out.size(), 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            const std::size_t dst = o * s.inner + in;
            if (op == Reduction::max) {
                double best = xd[base];
                std::size_t best_k = 0;
                for (std::size_t k = 1; k < s.extent; ++k) {
                    if (xd[base + k * s.inner] > best) {
                        best = xd[base + k * s.inner];
                        best_k = k;
                    }
                }
                out[dst] = best;
                arg[dst] = best_k;
            } else {
                double total = 0.0;
                for (std::size_t k = 0; k < s.extent; ++k) total += xd[base + k * s.inner];
                out[dst] = op == Reduction::mean ? total / static_cast<double>(s.extent) : total;
            }
        }
    }
    const char* name = op == Reduction::max ? "reduce_max" : (op == Reduction::mean ? "reduce_mean" : "reduce_sum");
    return Tensor::make(std::move(out_shape), std::move(out), {x}, name, [s, op, arg = std::move(arg)](Node& o) {
        double* g = grad_of(o, 0);
        if (!g) return;
        const double w = op == Reduction::mean ? 1.0 / static_cast<double>(s.extent) : 1.0;
        for (std::size_t ou = 0; ou < s.outer; ++ou) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = ou * s.extent * s.inner + in;
                const std::size_t src = ou * s.inner + in;
                if (op == Reduction::max) {
                    g[base + arg[src] * s.inner] += o.grad[src];
                } else {
                    for (std::size_t k = 0; k < s.extent; ++k) g[base + k * s.inner] += w * o.grad[src];
                }
            }
        }
    });
}

Tensor sum(const Tensor& x) {
    double total = 0.0;
    for (double v : x.data()) total += v;
    return Tensor::make({}, {total}, {x}, "sum", [](Node& o) {
        if (double* g = grad_of(o, 0)) {
            const auto n = o.parents[0]->data.size();
            for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[0];
        }
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    Buffer out(x.data().begin(), x.data().end());
    return Tensor::make(std::move(shape), std::move(out), {x}, "reshape", [](Node& o) {
        if (double* g = grad_of(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const auto s = split_axis(x.shape(), axis);
    if (length == 0 || start + length > s.extent) {
        throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of range for " +
                         to_string(x.shape()) + " axis " + std::to_string(axis));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    const auto xd = x.data();
    Buffer out(s.outer * length * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = xd.data() + (o * s.extent + start) * s.inner;
        std::copy(src, src + length * s.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * s.inner));
    }
    return Tensor::make(std::move(out_shape), std::move(out), {x}, "slice", [s, start, length](Node& o) {
        double* g = grad_of(o, 0);
        if (!g) return;
        for (std::size_t ou = 0; ou < s.outer; ++ou) {
            double* dst = g + (ou * s.extent + start) * s.inner;
            const double* src = o.grad.data() + ou * length * s.inner;
            for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
        }
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw EmptyInputError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    const auto s0 = split_axis(first, axis);
    std::size_t total = 0;
    std::vector<std::size_t> extents;
    for (const auto& p : parts) {
        const Shape& sh = p.shape();
        bool ok = sh.size() == first.size();
        for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = i == axis || sh[i] == first[i];
        if (!ok) throw ShapeError("concat: " + to_string(sh) + " incompatible with " + to_string(first));
        extents.push_back(sh[axis]);
        total += sh[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    Buffer out(s0.outer * total * s0.inner);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto pd = parts[pi].data();
        const std::size_t chunk = extents[pi] * s0.inner;
        for (std::size_t o = 0; o < s0.outer; ++o) {
            std::copy(pd.begin() + static_cast<std::ptrdiff_t>(o * chunk),
                      pd.begin() + static_cast<std::ptrdiff_t>((o + 1) * chunk),
                      out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * s0.inner));
        }
        offset += extents[pi];
    }
    return Tensor::make(std::move(out_shape), std::move(out), parts, "concat",
                        [s0, total, extents = std::move(extents)](Node& o) {
                            std::size_t off = 0;
                            for (std::size_t pi = 0; pi < extents.size(); ++pi) {
                                const std::size_t chunk = extents[pi] * s0.inner;
                                if (double* g = grad_of(o, pi)) {
                                    for (std::size_t ou = 0; ou < s0.outer; ++ou) {
                                        const double* src = o.grad.data() + (ou * total + off) * s0.inner;
                                        for (std::size_t i = 0; i < chunk; ++i) g[ou * chunk + i] += src[i];
                                    }
                                }
                                off += extents[pi];
                            }
                        });
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw EmptyInputError("stack of zero tensors");
    std::vector<Tensor> rows;
    rows.reserve(parts.size());
    for (const auto& p : parts) {
        Shape s = p.shape();
        s.insert(s.begin(), 1);
        rows.push_back(reshape(p, std::move(s)));
    }
    return concat(rows, 0);
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    require_rank(x, 2, "gather_rows");
    if (rows.empty()) throw EmptyInputError("gather_rows with no rows");
    const std::size_t r = x.shape()[0];
    const std::size_t c = x.shape()[1];
    const auto xd = x.data();
    Buffer out(rows.size() * c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= r) throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " of " + to_string(x.shape()));
        std::copy(xd.begin() + static_cast<std::ptrdiff_t>(rows[i] * c),
                  xd.begin() + static_cast<std::ptrdiff_t>((rows[i] + 1) * c),
                  out.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return Tensor::make({rows.size(), c}, std::move(out), {x}, "gather_rows", [rows, c](Node& o) {
        double* g = grad_of(o, 0);
        if (!g) return;
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < c; ++j) g[rows[i] * c + j] += o.grad[i * c + j];
    });
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
    require_rank(x, 2, "scale_rows");
    const std::size_t r = x.shape()[0];
    const std::size_t c = x.shape()[1];
    if (w.size() != r) {
        throw ShapeError("scale_rows: weights " + to_string(w.shape()) + " do not match rows of " + to_string(x.shape()));
    }
    const auto xd = x.data();
    const auto wd = w.data();
    Buffer out(xd.size());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xd[i * c + j] * wd[i];
    return Tensor::make(x.shape(), std::move(out), {x, w}, "scale_rows", [r, c](Node& o) {
        const double* xv = data_of(o, 0);
        const double* wv = data_of(o, 1);
        double* gx = grad_of(o, 0);
        double* gw = grad_of(o, 1);
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double g = o.grad[i * c + j];
                if (gx) gx[i * c + j] += g * wv[i];
                if (gw) gw[i] += g * xv[i * c + j];
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, double eps) {
    require_rank(x, 2, "layer_norm");
    const std::size_t r = x.shape()[0];
    const std::size_t c = x.shape()[1];
    const auto xd = x.data();
    Buffer out(xd.size());
    std::vector<double> inv_std(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += xd[i * c + j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (xd[i * c + j] - mu) * (xd[i * c + j] - mu);
        var /= static_cast<double>(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = (xd[i * c + j] - mu) * inv_std[i];
    }
    return Tensor::make(x.shape(), std::move(out), {x}, "layer_norm", [r, c, inv_std = std::move(inv_std)](Node& o) {
        double* g = grad_of(o, 0);
        if (!g) return;
        const double n = static_cast<double>(c);
        for (std::size_t i = 0; i < r; ++i) {
            const double* gy = o.grad.data() + i * c;
            const double* y = o.data.data() + i * c;
            double sum_g = 0.0;
            double sum_gy = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                sum_g += gy[j];
                sum_gy += gy[j] * y[j];
            }
            for (std::size_t j = 0; j < c; ++j) {
                g[i * c + j] += inv_std[i] * (gy[j] - sum_g / n - y[j] * sum_gy / n);
            }
        }
    });
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, Conv2dOptions options) {
    return conv2d(input, kernels, Tensor{}, options);
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, Conv2dOptions options) {
    const bool batched = input.rank() == 4;
    if (!batched && input.rank() != 3) {
        throw ShapeError("conv2d: input must be [C x H x W] or [N x C x H x W], got " + to_string(input.shape()));
    }
    require_rank(kernels, 4, "conv2d kernels");
    const std::size_t n = batched ? input.shape()[0] : 1;
    const std::size_t off = batched ? 1 : 0;
    const std::size_t ci = input.shape()[off];
    const std::size_t h = input.shape()[off + 1];
    const std::size_t w = input.shape()[off + 2];
    const std::size_t co = kernels.shape()[0];
    const std::size_t kh = kernels.shape()[2];
    const std::size_t kw = kernels.shape()[3];
    const std::size_t stride = options.stride;
    const std::size_t pad = options.pad;
    if (kernels.shape()[1] != ci) {
        throw ShapeError("conv2d: kernels " + to_string(kernels.shape()) + " do not match input " +
                         to_string(input.shape()));
    }
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (kh > h + 2 * pad || kw > w + 2 * pad) {
        throw ConfigError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " larger than padded input " +
                          std::to_string(h + 2 * pad) + "x" + std::to_string(w + 2 * pad));
    }
    if ((h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0) {
        throw ConfigError("conv2d: output extent is not an integer for input " + to_string(input.shape()) +
                          " with stride " + std::to_string(stride));
    }
    if (bias.defined() && bias.size() != co) {
        throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " does not match " + std::to_string(co) + " outputs");
    }
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (w + 2 * pad - kw) / stride + 1;
    const std::size_t patch = ci * kh * kw;
    const std::size_t positions = ho * wo;
    const std::size_t cols_n = n * positions;

    // im2col: rows index (c, ky, kx), columns index (sample, y, x).
    auto cols = std::make_shared<MatrixRM>(MatrixRM::Zero(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(cols_n)));
    const auto in = input.data();
    for (std::size_t c = 0; c < ci; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                double* row = cols->data() + ((c * kh + ky) * kw + kx) * cols_n;
                for (std::size_t s = 0; s < n; ++s) {
                    const double* plane = in.data() + (s * ci + c) * h * w;
                    for (std::size_t y = 0; y < ho; ++y) {
                        const auto iy = static_cast<std::ptrdiff_t>(y * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t x = 0; x < wo; ++x) {
                            const auto ix = static_cast<std::ptrdiff_t>(x * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            row[s * positions + y * wo + x] = plane[iy * static_cast<std::ptrdiff_t>(w) + ix];
                        }
                    }
                }
            }
        }
    }
    ConstMatrixMap weights(kernels.data().data(), static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(patch));
    MatrixRM result = weights * (*cols);
    if (bias.defined()) result.colwise() += ConstVectorMap(bias.data().data(), static_cast<Eigen::Index>(co));

    Buffer out(n * co * positions);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t c = 0; c < co; ++c)
            std::copy(result.data() + c * cols_n + s * positions, result.data() + c * cols_n + (s + 1) * positions,
                      out.begin() + static_cast<std::ptrdiff_t>((s * co + c) * positions));

    Shape out_shape = batched ? Shape{n, co, ho, wo} : Shape{co, ho, wo};
    std::vector<Tensor> parents{input, kernels};
    if (bias.defined()) parents.push_back(bias);
    const bool has_bias = bias.defined();
    return Tensor::make(std::move(out_shape), std::move(out), std::move(parents), "conv2d",
                        [=, cols = std::move(cols)](Node& o) {
                            MatrixRM gout(static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(cols_n));
                            for (std::size_t s = 0; s < n; ++s)
                                for (std::size_t c = 0; c < co; ++c)
                                    std::copy(o.grad.data() + (s * co + c) * positions,
                                              o.grad.data() + (s * co + c + 1) * positions,
                                              gout.data() + c * cols_n + s * positions);
                            if (double* gk = grad_of(o, 1)) {
                                MatrixMap(gk, static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(patch)).noalias() +=
                                    gout * cols->transpose();
                            }
                            if (has_bias) {
                                if (double* gb = grad_of(o, 2)) {
                                    VectorMap(gb, static_cast<Eigen::Index>(co)) += gout.rowwise().sum();
                                }
                            }
                            double* gi = grad_of(o, 0);
                            if (!gi) return;
                            ConstMatrixMap wts(data_of(o, 1), static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(patch));
                            MatrixRM gcols = wts.transpose() * gout;
                            for (std::size_t c = 0; c < ci; ++c) {
                                for (std::size_t ky = 0; ky < kh; ++ky) {
                                    for (std::size_t kx = 0; kx < kw; ++kx) {
                                        const double* row = gcols.data() + ((c * kh + ky) * kw + kx) * cols_n;
                                        for (std::size_t s = 0; s < n; ++s) {
                                            double* plane = gi + (s * ci + c) * h * w;
                                            for (std::size_t y = 0; y < ho; ++y) {
                                                const auto iy = static_cast<std::ptrdiff_t>(y * stride + ky) -
                                                                static_cast<std::ptrdiff_t>(pad);
                                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                                for (std::size_t x = 0; x < wo; ++x) {
                                                    const auto ix = static_cast<std::ptrdiff_t>(x * stride + kx) -
                                                                    static_cast<std::ptrdiff_t>(pad);
                                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                                    plane[iy * static_cast<std::ptrdiff_t>(w) + ix] +=
                                                        row[s * positions + y * wo + x];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        });
}

Tensor avg_pool2d(const Tensor& input, std::size_t window) {
    if (input.rank() < 2) throw ShapeError("avg_pool2d: need at least 2 axes, got " + to_string(input.shape()));
    const std::size_t h = input.shape()[input.rank() - 2];
    const std::size_t w = input.shape()[input.rank() - 1];
    if (window == 0 || h % window != 0 || w % window != 0) {
        throw ConfigError("avg_pool2d: window " + std::to_string(window) + " does not tile " + to_string(input.shape()));
    }
    const std::size_t planes = input.size() / (h * w);
    const std::size_t ho = h / window;
    const std::size_t wo = w / window;
    const double inv = 1.0 / static_cast<double>(window * window);
    Shape out_shape = input.shape();
    out_shape[out_shape.size() - 2] = ho;
    out_shape[out_shape.size() - 1] = wo;
    const auto in = input.data();
    Buffer out(planes * ho * wo, 0.0);
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out[(p * ho + y / window) * wo + x / window] += in[(p * h + y) * w + x] * inv;
    return Tensor::make(std::move(out_shape), std::move(out), {input}, "avg_pool2d", [=](Node& o) {
        double* g = grad_of(o, 0);
        if (!g) return;
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    g[(p * h + y) * w + x] += o.grad[(p * ho + y / window) * wo + x / window] * inv;
    });
}

} // namespace spotkit
