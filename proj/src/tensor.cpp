#include "spotkit/tensor.hpp"

#include "spotkit/errors.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace spotkit {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& shape) {
    for (auto e : shape) {
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    const auto n = numel(shape);
    return from(std::move(shape), Buffer(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, const std::vector<double>& values, bool requires_grad) {
    return from(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
    return from(std::move(shape), Buffer(values), requires_grad);
}

Tensor Tensor::from(Shape shape, Buffer values, bool requires_grad) {
    check_shape(shape);
    if (numel(shape) != values.size()) {
        throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, Buffer{value}, requires_grad); }

Tensor Tensor::from_matrix(const Eigen::Ref<const MatrixRM>& m, bool requires_grad) {
    Buffer values(static_cast<std::size_t>(m.size()));
    MatrixMap(values.data(), m.rows(), m.cols()) = m;
    return from({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(values),
                requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
    return shape()[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }

std::span<double> Tensor::mutable_data() { return node_->data; }

std::span<const double> Tensor::grad() const { return node_->grad; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

const char* Tensor::op() const { return node_->op; }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    const auto cols = rank() == 2 ? shape()[1] : size();
    return node_->data[i * cols + j];
}

ConstMatrixMap Tensor::matrix() const {
    const auto& s = shape();
    if (s.size() == 2) {
        return ConstMatrixMap(node_->data.data(), static_cast<Eigen::Index>(s[0]), static_cast<Eigen::Index>(s[1]));
    }
    return ConstMatrixMap(node_->data.data(), 1, static_cast<Eigen::Index>(size()));
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

namespace {
thread_local bool grad_mode = true;
} // namespace

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }

NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

Tensor Tensor::make(Shape shape, Buffer data, std::vector<Tensor> parents, const char* op,
                    detail::BackwardFn backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool any = false;
    if (grad_enabled()) {
        for (const auto& p : parents) any = any || p.requires_grad();
    }
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_);
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

ComputationRecord ComputationRecord::trace(const Tensor& output) {
    ComputationRecord record;
    if (!output.defined()) return record;
    std::unordered_set<const detail::Node*> visited;
    // Iterative post-order DFS; recurrent graphs are deep enough to make
    // recursion a liability.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited.insert(output.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            record.order_.push_back(node);
            stack.pop_back();
        }
    }
    return record;
}

void backward(const ComputationRecord& record, const Tensor& output) {
    if (output.size() != 1) {
        throw ContractError("backward() needs a scalar output, got shape " + to_string(output.shape()));
    }
    if (!output.requires_grad()) return;
    for (auto* node : record.nodes()) node->grad.assign(node->data.size(), 0.0);
    output.node()->grad.assign(1, 1.0);
    const auto& order = record.nodes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward) node->backward(*node);
    }
}

void backward(const Tensor& output) { backward(ComputationRecord::trace(output), output); }

} // namespace spotkit
