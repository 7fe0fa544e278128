#include "spotkit/errors.hpp"
#include "spotkit/gradcheck.hpp"
#include "spotkit/losses.hpp"
#include "spotkit/ops.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace spotkit;
using spotkit::testing::random_tensor;

namespace {

// Softmax rows from random logits so every probability is well inside (0, 1).
Tensor random_scores(std::size_t t, std::size_t cols, Rng& rng, bool grad = false) {
    Tensor logits = random_tensor({t, cols}, rng, -2.0, 2.0);
    Tensor s = softmax(logits, 1);
    std::vector<double> v(s.data().begin(), s.data().end());
    return Tensor::from({t, cols}, std::move(v), grad);
}

std::vector<std::size_t> random_labels(std::size_t t, std::size_t k, Rng& rng) {
    std::vector<std::size_t> out(t);
    for (auto& l : out) l = static_cast<std::size_t>(rng.below(k + 1));
    return out;
}

double reference_focal(const Tensor& scores, const LabelMatrix& y, double alpha, double gamma) {
    double total = 0.0;
    for (std::size_t t = 0; t < y.frames(); ++t) {
        for (std::size_t k = 0; k < y.columns(); ++k) {
            const double q = std::clamp(scores[t * y.columns() + k], kProbabilityClamp, 1.0 - kProbabilityClamp);
            const double target = y(t, k);
            const double ystar = q * target + (1 - q) * (1 - target);
            const double astar = alpha * target + (1 - alpha) * (1 - target);
            const double b = -(target * std::log(q) + (1 - target) * std::log(1 - q));
            total += astar * std::pow(1 - ystar, gamma) * b;
        }
    }
    return total / static_cast<double>(y.frames());
}

} // namespace

TEST_CASE("bce scalar values") {
    CHECK(bce(1.0 - kProbabilityClamp, 1.0) <= 1e-6);
    CHECK(bce(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce(0.5, 0.0) == doctest::Approx(0.6931).epsilon(1e-4));
    CHECK(bce(0.3, 1.0) == doctest::Approx(bce(0.7, 0.0)).epsilon(1e-14));
    CHECK(bce(0.0, 1.0) == doctest::Approx(-std::log(kProbabilityClamp)));
    CHECK(std::isfinite(bce(1.0, 0.0)));
    for (double q : {1e-9, 0.01, 0.4, 0.99, 1.0}) {
        CHECK(bce(q, 0.0) >= 0.0);
        CHECK(bce(q, 1.0) >= 0.0);
    }
}

TEST_CASE("focal term scalar oracle") {
    const double expected = 0.25 * 0.01 * -std::log(0.9);
    CHECK(focal_term(0.9, 1.0, 0.25, 2.0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(focal_term(0.9, 1.0, 0.25, 2.0) == doctest::Approx(2.634e-4).epsilon(1e-3));
    // background column uses 1 - alpha and 1 - y_hat
    CHECK(focal_term(0.1, 0.0, 0.25, 2.0) == doctest::Approx(0.75 * 0.01 * -std::log(0.9)).epsilon(1e-12));
}

TEST_CASE("label matrix") {
    LabelMatrix y({0, 2, 1}, 2);
    CHECK(y.frames() == 3);
    CHECK(y.columns() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
        double row = 0.0;
        for (std::size_t k = 0; k < 3; ++k) row += y(t, k);
        CHECK(row == 1.0);
    }
    CHECK(y(1, 2) == 1.0);
    const Tensor oh = y.one_hot();
    CHECK(oh.dim(0) == 3);
    CHECK(oh.dim(1) == 3);
    CHECK(oh[0] == 1.0);
    CHECK(oh[5] == 1.0);
    CHECK_THROWS_AS(LabelMatrix({0, 3}, 2), ContractError);
}

TEST_CASE("focal loss matches the scalar reference") {
    Rng rng(3);
    for (double gamma : {0.0, 1.0, 2.0, 5.0}) {
        for (double alpha : {0.1, 0.25, 0.5, 0.9}) {
            const Tensor s = random_scores(7, 4, rng);
            const LabelMatrix y(random_labels(7, 3, rng), 3);
            CHECK(focal_loss(s, y, alpha, gamma).item() ==
                  doctest::Approx(reference_focal(s, y, alpha, gamma)).epsilon(1e-12));
        }
    }
}

TEST_CASE("gamma 0 and alpha 0.5 collapse to half the cross-entropy") {
    Rng rng(4);
    const Tensor s = random_scores(10, 6, rng);
    const LabelMatrix y(random_labels(10, 5, rng), 5);
    const double fl = focal_loss(s, y, 0.5, 0.0).item();
    const double ce = cross_entropy_loss(s, y).item();
    CHECK(std::abs(fl - 0.5 * ce) <= 1e-14 * ce);
}

TEST_CASE("perfect prediction gives a vanishing loss") {
    const LabelMatrix y({0, 1, 3, 2, 0}, 3);
    Tensor s = y.one_hot();
    CHECK(focal_loss(s, y, 0.25, 5.0).item() <= 1e-5);
    CHECK(focal_loss(s, y, 0.5, 0.0).item() <= 1e-5);
}

TEST_CASE("focal loss is nonnegative") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor s = random_scores(5, 3, rng);
        const LabelMatrix y(random_labels(5, 2, rng), 2);
        CHECK(focal_loss(s, y, rng.uniform(0.01, 0.99), rng.uniform(0.0, 6.0)).item() >= 0.0);
    }
}

TEST_CASE("focal term is nonincreasing in gamma when y* exceeds 1/e") {
    for (double ystar : {0.37, 0.5, 0.8, 0.99}) {
        double previous = focal_term(ystar, 1.0, 0.25, 0.0);
        for (double gamma = 0.25; gamma <= 8.0; gamma += 0.25) {
            const double now = focal_term(ystar, 1.0, 0.25, gamma);
            CHECK(now <= previous);
            previous = now;
        }
    }
}

TEST_CASE("focal loss gradient matches finite differences") {
    Rng rng(6);
    for (double gamma : {0.0, 0.5, 2.0, 5.0}) {
        Tensor s = random_scores(6, 4, rng, true);
        const LabelMatrix y(random_labels(6, 3, rng), 3);
        const double err = finite_difference_check([&] { return focal_loss(s, y, 0.25, gamma); }, s, 1e-6);
        CHECK(err <= 1e-4);
    }
    Tensor s = random_scores(6, 4, rng, true);
    const LabelMatrix y(random_labels(6, 3, rng), 3);
    CHECK(finite_difference_check([&] { return cross_entropy_loss(s, y); }, s, 1e-6) <= 1e-4);
}

TEST_CASE("focal loss gradient flows through softmax") {
    Rng rng(7);
    Tensor logits = random_tensor({5, 4}, rng, -1.5, 1.5, true);
    const LabelMatrix y(random_labels(5, 3, rng), 3);
    const double err = finite_difference_check([&] { return focal_loss(softmax(logits, 1), y, 0.25, 5.0); }, logits);
    CHECK(err <= 1e-4);
}

TEST_CASE("gradient is zero where the clamp is active") {
    const LabelMatrix y({1}, 1);
    Tensor s = Tensor::from({1, 2}, {0.0, 1.0}, true);
    backward(focal_loss(s, y, 0.25, 2.0));
    CHECK(s.grad()[0] == 0.0);
    CHECK(s.grad()[1] == 0.0);
}

TEST_CASE("focal and cross-entropy gradients are proportional at gamma 0") {
    Rng rng(8);
    Tensor a = random_scores(8, 5, rng, true);
    Tensor b = Tensor::from({8, 5}, Buffer(a.data().begin(), a.data().end()), true);
    const LabelMatrix y(random_labels(8, 4, rng), 4);
    backward(focal_loss(a, y, 0.5, 0.0));
    backward(cross_entropy_loss(b, y));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.grad()[i] - 0.5 * b.grad()[i]) <= 1e-10);
}

TEST_CASE("focal loss argument errors") {
    const LabelMatrix y({0, 1}, 2);
    const Tensor s = Tensor::full({2, 3}, 1.0 / 3.0);
    CHECK_THROWS_AS(focal_loss(Tensor::full({3, 3}, 1.0 / 3.0), y, 0.25, 2.0), ContractError);
    CHECK_THROWS_AS(focal_loss(Tensor::full({2, 4}, 0.25), y, 0.25, 2.0), ContractError);
    CHECK_THROWS_AS(focal_loss(s, y, 0.0, 2.0), ConfigError);
    CHECK_THROWS_AS(focal_loss(s, y, 1.0, 2.0), ConfigError);
    CHECK_THROWS_AS(focal_loss(s, y, 0.25, -1.0), ConfigError);
    CHECK_THROWS_AS(cross_entropy_loss(Tensor::full({3, 3}, 1.0 / 3.0), y), ContractError);
}

TEST_CASE("loss kind names") {
    CHECK(parse_loss_kind("focal") == LossKind::focal);
    CHECK(parse_loss_kind("ce") == LossKind::ce);
    CHECK(to_string(LossKind::ce) == "ce");
    CHECK_THROWS_AS(parse_loss_kind("hinge"), ConfigError);
}
