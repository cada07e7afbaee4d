#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

#include "ocdmlc/graph.hpp"
#include "ocdmlc/params.hpp"

namespace ocdmlc {

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

namespace detail {
inline void require_epsilon(double eps) {
    if (!(eps > 0.0 && eps <= 1e-3)) {
        throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-3], got " + std::to_string(eps));
    }
}
inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}
}  // namespace detail

/// Compare reverse-mode gradients of `loss(graph)` against central
/// differences, perturbing every parameter in `params` in place.
/// `loss` must rebuild the full forward pass from scratch on each call
/// and be deterministic. At most `max_coords` coordinates per tensor are
/// checked (evenly strided) to bound the cost on larger models.
template <class LossFn>
GradCheckReport grad_check(LossFn&& loss, ParameterStore& params, double eps,
                           std::size_t max_coords = std::numeric_limits<std::size_t>::max()) {
    detail::require_epsilon(eps);
    GradientMap analytic;
    {
        Graph g;
        const NodeId l = loss(g);
        analytic = g.backward(l);
    }
    auto evaluate = [&] {
        Graph g;
        return g.value(loss(g)).item();
    };
    GradCheckReport report;
    for (auto& [name, tensor] : params) {
        auto found = analytic.find(name);
        const std::size_t n = tensor.size();
        const std::size_t stride = std::max<std::size_t>(1, n / std::min(n, max_coords));
        for (std::size_t i = 0; i < n; i += stride) {
            const double saved = tensor[i];
            tensor[i] = saved + eps;
            const double up = evaluate();
            tensor[i] = saved - eps;
            const double down = evaluate();
            tensor[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = found == analytic.end() ? 0.0 : found->second[i];
            const double err = detail::relative_error(a, numeric);
            ++report.checked;
            if (report.checked == 1 || err > report.max_relative_error) {
                report.max_relative_error = err;
                report.worst_parameter = name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

/// Single-tensor form: `f(graph, theta_node)` returns a scalar node.
template <class F>
double grad_check(F&& f, const Tensor& theta, double eps) {
    ParameterStore store;
    store.add("theta", theta);
    return grad_check([&](Graph& g) { return f(g, store.bind(g, "theta")); }, store, eps).max_relative_error;
}

}  // namespace ocdmlc
