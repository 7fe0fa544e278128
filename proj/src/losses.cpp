#include "spotkit/losses.hpp"

#include "spotkit/errors.hpp"

#include <algorithm>
#include <cmath>

namespace spotkit {

LabelMatrix::LabelMatrix(std::vector<std::size_t> labels, std::size_t num_classes)
    : labels_(std::move(labels)), columns_(num_classes + 1) {
    for (std::size_t t = 0; t < labels_.size(); ++t) {
        if (labels_[t] >= columns_) {
            throw ContractError("label " + std::to_string(labels_[t]) + " at frame " + std::to_string(t) +
                                " exceeds " + std::to_string(num_classes) + " classes");
        }
    }
}

Tensor LabelMatrix::one_hot() const {
    Buffer v(labels_.size() * columns_, 0.0);
    for (std::size_t t = 0; t < labels_.size(); ++t) v[t * columns_ + labels_[t]] = 1.0;
    return Tensor::from({labels_.size(), columns_}, std::move(v));
}

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

void check_shapes(const Tensor& scores, const LabelMatrix& labels, const char* what) {
    if (scores.rank() != 2 || scores.dim(0) != labels.frames() || scores.dim(1) != labels.columns()) {
        throw ContractError(std::string(what) + ": scores " + to_string(scores.shape()) + " do not match labels [" +
                            std::to_string(labels.frames()) + "x" + std::to_string(labels.columns()) + "]");
    }
}

// d focal_term / d y_hat.
double focal_slope(double y_hat, double y, double alpha, double gamma) {
    if (y_hat < kProbabilityClamp || y_hat > 1.0 - kProbabilityClamp) return 0.0;
    const double q = y > 0.5 ? y_hat : 1.0 - y_hat;
    const double a = y > 0.5 ? alpha : 1.0 - alpha;
    const double miss = 1.0 - q;
    double d_dq = -std::pow(miss, gamma) / q;
    if (gamma != 0.0) d_dq += gamma * std::pow(miss, gamma - 1.0) * std::log(q);
    return a * (y > 0.5 ? d_dq : -d_dq);
}

} // namespace

double bce(double y_hat, double y) {
    const double p = clamp_probability(y_hat);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

double focal_term(double y_hat, double y, double alpha, double gamma) {
    const double p = clamp_probability(y_hat);
    const double q = p * y + (1.0 - p) * (1.0 - y);
    const double a = alpha * y + (1.0 - alpha) * (1.0 - y);
    return a * std::pow(1.0 - q, gamma) * bce(p, y);
}

Tensor focal_loss(const Tensor& scores, const LabelMatrix& labels, double alpha, double gamma) {
    check_shapes(scores, labels, "focal_loss");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("focal_loss: alpha must lie in (0, 1)");
    if (!(gamma >= 0.0)) throw ConfigError("focal_loss: gamma must be nonnegative");
    const std::size_t t_len = labels.frames();
    const std::size_t cols = labels.columns();
    const auto p = scores.data();
    double total = 0.0;
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t k = 0; k < cols; ++k) total += focal_term(p[t * cols + k], labels(t, k), alpha, gamma);
    const double inv_t = 1.0 / static_cast<double>(t_len);
    return Tensor::make({}, {total * inv_t}, {scores}, "focal_loss", [=](detail::Node& o) {
        auto& parent = *o.parents[0];
        if (!parent.requires_grad) return;
        const double g = o.grad[0] * inv_t;
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t k = 0; k < cols; ++k) {
                const std::size_t i = t * cols + k;
                parent.grad[i] += g * focal_slope(parent.data[i], labels(t, k), alpha, gamma);
            }
    });
}

Tensor cross_entropy_loss(const Tensor& scores, const LabelMatrix& labels) {
    check_shapes(scores, labels, "cross_entropy_loss");
    const std::size_t t_len = labels.frames();
    const std::size_t cols = labels.columns();
    const auto p = scores.data();
    double total = 0.0;
    for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t k = 0; k < cols; ++k) total += bce(p[t * cols + k], labels(t, k));
    const double inv_t = 1.0 / static_cast<double>(t_len);
    return Tensor::make({}, {total * inv_t}, {scores}, "cross_entropy_loss", [=](detail::Node& o) {
        auto& parent = *o.parents[0];
        if (!parent.requires_grad) return;
        const double g = o.grad[0] * inv_t;
        for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t k = 0; k < cols; ++k) {
                const std::size_t i = t * cols + k;
                const double y_hat = parent.data[i];
                if (y_hat < kProbabilityClamp || y_hat > 1.0 - kProbabilityClamp) continue;
                const double y = labels(t, k);
                parent.grad[i] += g * (y > 0.5 ? -1.0 / y_hat : 1.0 / (1.0 - y_hat));
            }
    });
}

std::string to_string(LossKind kind) { return kind == LossKind::ce ? "ce" : "focal"; }

LossKind parse_loss_kind(const std::string& text) {
    if (text == "focal") return LossKind::focal;
    if (text == "ce") return LossKind::ce;
    throw ConfigError("loss must be 'focal' or 'ce', got '" + text + "'");
}

} // namespace spotkit
