#pragma once

#include "spotkit/rng.hpp"
#include "spotkit/tensor.hpp"

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace spotkit {

// Named, ordered collection of trainable leaves. Modules keep Tensor handles
// that alias the stored entries, so optimizer updates are visible to them.
class ParameterStore {
public:
    Tensor add(const std::string& name, Tensor value);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return entries_.size(); }
    std::size_t total_values() const;
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::vector<Tensor> tensors() const;

    // Resets every gradient buffer to zeros of the parameter's size.
    void zero_grad();

    // Copies values from `other` by name; shapes must agree and names match.
    void assign_from(const ParameterStore& other);

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t> index_;
};

Tensor uniform_init(Shape shape, double bound, Rng rng);
Tensor normal_init(Shape shape, double stddev, Rng rng);

// y = x W + b with W [in x out], b [out]. Weights use a Glorot-uniform
// draw; bias starts at zero.
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, const Rng& rng,
           bool with_bias = true);

    Tensor operator()(const Tensor& x) const;
};

} // namespace spotkit
