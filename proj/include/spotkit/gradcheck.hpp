#pragma once

#include "spotkit/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace spotkit {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
    // Location of the worst coordinate: (leaf index, flat offset).
    std::size_t worst_leaf = 0;
    std::size_t worst_offset = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradCheckOptions {
    double step = 1e-5;
    // When nonempty, each coordinate is differenced at every listed step and
    // scored by the closest estimate; `step` is then ignored.
    std::vector<double> steps;
    // 0 checks every coordinate; otherwise a seeded sample of at most this
    // many coordinates per leaf.
    std::size_t max_coordinates_per_leaf = 0;
    std::uint64_t seed = 0;
};

// Central differences (f(x+h) - f(x-h)) / 2h against backward(). The
// relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
// `f` must rebuild its graph from the current leaf values on every call.
GradCheckReport finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                        GradCheckOptions options = {});

double finite_difference_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5);

} // namespace spotkit
