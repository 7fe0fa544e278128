#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spotkit {

using Shape = std::vector<std::size_t>;

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<MatrixRM>;
using ConstMatrixMap = Eigen::Map<const MatrixRM>;
using VectorMap = Eigen::Map<Eigen::VectorXd>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Storage aligned for Eigen's widest packets, so vectorized reductions
// split their work identically regardless of where a buffer lands.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One vertex of the reverse-mode graph. Leaves have no backward function.
struct Node {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    // Grad buffer of a parent, allocated on demand by the record.
    Buffer& parent_grad(std::size_t i) { return parents[i]->grad; }
};

} // namespace detail

// Dense row-major array of doubles with optional reverse-mode gradient.
// Copies share the underlying node; forward ops never mutate their inputs.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, const std::vector<double>& values, bool requires_grad = false);
    static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
    static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from_matrix(const Eigen::Ref<const MatrixRM>& m, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;

    std::span<const double> data() const;
    // Only meaningful for leaves (parameters, inputs); ops never call this.
    std::span<double> mutable_data();
    std::span<const double> grad() const;
    bool has_grad() const;
    bool requires_grad() const;
    void set_requires_grad(bool flag);
    const char* op() const;

    double item() const;
    double operator[](std::size_t i) const { return data()[i]; }
    double at(std::size_t i, std::size_t j) const;

    // 2-D views; rank-1 tensors are treated as a single row.
    ConstMatrixMap matrix() const;
    MatrixRM to_matrix() const { return matrix(); }

    // A fresh leaf holding a copy of the values, cut from any graph.
    Tensor detach() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

    static Tensor make(Shape shape, Buffer data, std::vector<Tensor> parents,
                       const char* op, detail::BackwardFn backward);

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

// While a guard is alive on a thread, ops on that thread record no graph.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Topologically ordered list of the nodes reachable from an output.
// Replaying it in reverse visits every node exactly once.
class ComputationRecord {
public:
    static ComputationRecord trace(const Tensor& output);

    std::size_t size() const { return order_.size(); }
    const std::vector<detail::Node*>& nodes() const { return order_; }

private:
    std::vector<detail::Node*> order_;
};

// Reverse-mode sweep. All grad buffers in the record are reset first, so a
// second call on the same record reproduces the first bit for bit.
void backward(const ComputationRecord& record, const Tensor& output);
void backward(const Tensor& output);

} // namespace spotkit
