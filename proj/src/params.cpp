#include "spotkit/params.hpp"

#include "spotkit/errors.hpp"
#include "spotkit/ops.hpp"

#include <cmath>

namespace spotkit {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
    if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
    value.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, value);
    return value;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

std::size_t ParameterStore::total_values() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
}

std::vector<Tensor> ParameterStore::tensors() const {
    std::vector<Tensor> out;
    out.reserve(entries_.size());
    for (const auto& [name, t] : entries_) out.push_back(t);
    return out;
}

void ParameterStore::assign_from(const ParameterStore& other) {
    if (other.size() != size()) throw CheckpointError("parameter count mismatch");
    for (auto& [name, t] : entries_) {
        if (!other.contains(name)) throw CheckpointError("missing parameter '" + name + "'");
        const Tensor& src = other.get(name);
        if (src.shape() != t.shape()) {
            throw CheckpointError("parameter '" + name + "' has shape " + to_string(src.shape()) + ", expected " +
                                  to_string(t.shape()));
        }
        auto dst = t.mutable_data();
        std::copy(src.data().begin(), src.data().end(), dst.begin());
    }
}

void ParameterStore::zero_grad() {
    for (auto& [name, t] : entries_) t.node()->grad.assign(t.size(), 0.0);
}

Tensor uniform_init(Shape shape, double bound, Rng rng) {
    Buffer values(numel(shape));
    for (auto& v : values) v = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(values));
}

Tensor normal_init(Shape shape, double stddev, Rng rng) {
    Buffer values(numel(shape));
    for (auto& v : values) v = rng.normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(values));
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, const Rng& rng,
               bool with_bias) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    weight = store.add(name + ".weight", uniform_init({in, out}, bound, rng.split(name + ".weight")));
    if (with_bias) bias = store.add(name + ".bias", Tensor::zeros({out}));
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
}

} // namespace spotkit
