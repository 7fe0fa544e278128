#pragma once

#include "spotkit/tensor.hpp"

#include <cstddef>
#include <string>
#include <vector>

namespace spotkit {

inline constexpr double kProbabilityClamp = 1e-7;

// One-hot frame labels, background at column 0.
class LabelMatrix {
public:
    LabelMatrix() = default;
    // labels[t] in [0, num_classes]; 0 is background.
    LabelMatrix(std::vector<std::size_t> labels, std::size_t num_classes);

    std::size_t frames() const { return labels_.size(); }
    std::size_t columns() const { return columns_; }
    std::size_t label(std::size_t t) const { return labels_.at(t); }
    const std::vector<std::size_t>& labels() const { return labels_; }
    double operator()(std::size_t t, std::size_t k) const { return labels_[t] == k ? 1.0 : 0.0; }
    Tensor one_hot() const;

private:
    std::vector<std::size_t> labels_;
    std::size_t columns_ = 0;
};

// Binary cross-entropy on a clamped probability, always >= 0.
double bce(double y_hat, double y);

// Class-wise focal term a* (1 - y*)^gamma bce(y_hat, y) with
// y* = y_hat y + (1 - y_hat)(1 - y) and a* = alpha y + (1 - alpha)(1 - y).
double focal_term(double y_hat, double y, double alpha, double gamma);

// (1/T) sum_t sum_k focal_term(scores[t,k], Y[t,k]). scores is [T x (K+1)].
// The gradient is analytic and zero where the clamp is active.
Tensor focal_loss(const Tensor& scores, const LabelMatrix& labels, double alpha, double gamma);

// (1/T) sum_t sum_k bce(scores[t,k], Y[t,k]).
Tensor cross_entropy_loss(const Tensor& scores, const LabelMatrix& labels);

enum class LossKind { focal, ce };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

} // namespace spotkit
