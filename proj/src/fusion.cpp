#include "spotkit/fusion.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

#include <cmath>

namespace spotkit {

FusionAttention::FusionAttention(std::size_t dim, ParameterStore& store, const Rng& rng) : dim_(dim) {
    const double bound = std::sqrt(3.0 / static_cast<double>(dim));
    wq_ = store.add("fusion.query", uniform_init({dim, dim}, bound, rng.split("fusion.query")));
    wk_ = store.add("fusion.key", uniform_init({dim, dim}, bound, rng.split("fusion.key")));
    wv_ = store.add("fusion.value", uniform_init({dim, dim}, bound, rng.split("fusion.value")));
}

Tensor FusionAttention::fuse(const Tensor& env, const Tensor& ent) const {
    if (env.rank() != 2 || ent.shape() != env.shape() || env.dim(1) != dim_) {
        throw ShapeError("fuse: expected two [T x " + std::to_string(dim_) + "] inputs, got " + to_string(env.shape()) +
                         " and " + to_string(ent.shape()));
    }
    const std::size_t t_len = env.dim(0);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim_));

    // Batched form of self_attention() on the per-frame pair [env_t; ent_t].
    const Tensor qe = matmul(env, wq_);
    const Tensor ke = matmul(env, wk_);
    const Tensor ve = matmul(env, wv_);
    const Tensor qn = matmul(ent, wq_);
    const Tensor kn = matmul(ent, wk_);
    const Tensor vn = matmul(ent, wv_);
    const auto score = [&](const Tensor& q, const Tensor& k) {
        return reshape(scale(reduce(Reduction::sum, mul(q, k), 1), inv_sqrt_d), {t_len, 1});
    };
    const Tensor from_env = softmax(concat({score(qe, ke), score(qe, kn)}, 1), 1);
    const Tensor from_ent = softmax(concat({score(qn, ke), score(qn, kn)}, 1), 1);
    const auto column = [&](const Tensor& w, std::size_t j) { return reshape(slice(w, 1, j, 1), {t_len}); };
    const Tensor env_out = add(env, add(scale_rows(ve, column(from_env, 0)), scale_rows(vn, column(from_env, 1))));
    const Tensor ent_out = add(ent, add(scale_rows(ve, column(from_ent, 0)), scale_rows(vn, column(from_ent, 1))));
    return scale(add(env_out, ent_out), 0.5);
}

Tensor fuse(const FusionAttention& block, const Tensor& f_env, const Tensor& f_ent) {
    if (f_env.size() != f_ent.size()) {
        throw ShapeError("fuse: dimension mismatch " + to_string(f_env.shape()) + " vs " + to_string(f_ent.shape()));
    }
    const auto as_row = [](const Tensor& v) { return v.rank() == 2 ? v : reshape(v, {1, v.size()}); };
    return block.fuse(as_row(f_env), as_row(f_ent));
}

} // namespace spotkit
