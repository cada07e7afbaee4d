#pragma once

#include <cmath>
#include <map>
#include <string>

#include "ocdmlc/graph.hpp"
#include "ocdmlc/rng.hpp"
#include "ocdmlc/tensor.hpp"

namespace ocdmlc {

/// Named trainable tensors. Ordered by name so iteration (and therefore
/// checkpoints and optimizer state) is deterministic.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor value) {
        auto [it, inserted] = tensors_.insert_or_assign(name, std::move(value));
        return it->second;
    }

    Tensor& add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
        Tensor t(std::move(shape));
        for (auto& v : t.values()) v = rng.uniform(-bound, bound);
        return add(name, std::move(t));
    }

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor& get(const std::string& name) const { return tensors_.at(name); }
    Tensor& get(const std::string& name) { return tensors_.at(name); }

    /// Bind a parameter into a graph.
    NodeId bind(Graph& g, const std::string& name) const { return g.parameter(name, tensors_.at(name)); }

    std::size_t count() const noexcept { return tensors_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors_) n += t.size();
        return n;
    }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    bool operator==(const ParameterStore&) const = default;

private:
    std::map<std::string, Tensor> tensors_;
};

inline double global_norm(const GradientMap& grads) {
    double s = 0.0;
    for (const auto& [_, g] : grads)
        for (double v : g.values()) s += v * v;
    return std::sqrt(s);
}

}  // namespace ocdmlc
