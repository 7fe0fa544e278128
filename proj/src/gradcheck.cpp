#include "spotkit/gradcheck.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace spotkit {

GradCheckReport finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> leaves,
                                        GradCheckOptions options) {
    for (auto& leaf : leaves) leaf.set_requires_grad(true);
    const Tensor out = f();
    if (out.size() != 1) throw ContractError("finite_difference_check needs a scalar-valued function");
    backward(out);

    GradCheckReport report;
    Rng rng(options.seed);
    const std::vector<double> steps = options.steps.empty() ? std::vector<double>{options.step} : options.steps;
    for (double h : steps) {
        if (!(h > 0.0)) throw ContractError("finite-difference steps must be positive");
    }
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor& leaf = leaves[li];
        std::vector<double> analytic(leaf.size(), 0.0);
        if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

        std::vector<std::size_t> coords(leaf.size());
        std::iota(coords.begin(), coords.end(), 0);
        if (options.max_coordinates_per_leaf > 0 && coords.size() > options.max_coordinates_per_leaf) {
            for (std::size_t i = 0; i < options.max_coordinates_per_leaf; ++i) {
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            }
            coords.resize(options.max_coordinates_per_leaf);
            std::sort(coords.begin(), coords.end());
        }

        auto values = leaf.mutable_data();
        for (std::size_t c : coords) {
            const double saved = values[c];
            double err = std::numeric_limits<double>::infinity();
            double numeric = std::numeric_limits<double>::quiet_NaN();
            for (double h : steps) {
                values[c] = saved + h;
                const double plus = f().item();
                values[c] = saved - h;
                const double minus = f().item();
                values[c] = saved;
                const double estimate = (plus - minus) / (2.0 * h);
                const double denom = std::max({std::abs(analytic[c]), std::abs(estimate), 1e-8});
                const double e = std::abs(analytic[c] - estimate) / denom;
                if (e < err || std::isnan(numeric)) {
                    err = e;
                    numeric = estimate;
                }
            }
            ++report.coordinates;
            if (err > report.max_relative_error || !std::isfinite(err)) {
                report.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
                report.worst_leaf = li;
                report.worst_offset = c;
                report.worst_analytic = analytic[c];
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

double finite_difference_check(const std::function<Tensor()>& f, Tensor x, double h) {
    return finite_difference_check(f, std::vector<Tensor>{std::move(x)}, GradCheckOptions{h, {}, 0, 0}).max_relative_error;
}

} // namespace spotkit
