#pragma once

#include "spotkit/params.hpp"
#include "spotkit/tensor.hpp"

#include <cstddef>

namespace spotkit {

// Unifies the environment and entity features of each frame: the two vectors
// form a 2-token sequence, pass through single-head self-attention with a
// residual, and are averaged back to one D-vector.
class FusionAttention {
public:
    FusionAttention() = default;
    FusionAttention(std::size_t dim, ParameterStore& store, const Rng& rng);

    // env, ent: [T x D] -> [T x D]. Every frame is fused independently.
    Tensor fuse(const Tensor& env, const Tensor& ent) const;

    const Tensor& wq() const { return wq_; }
    const Tensor& wk() const { return wk_; }
    const Tensor& wv() const { return wv_; }

private:
    std::size_t dim_ = 0;
    Tensor wq_;
    Tensor wk_;
    Tensor wv_;
};

// One frame: f_env, f_ent of dim D (rank 1 or [1 x D]) -> [1 x D].
Tensor fuse(const FusionAttention& block, const Tensor& f_env, const Tensor& f_ent);

} // namespace spotkit
