#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ocdmlc/tensor.hpp"

namespace ocdmlc {

using NodeId = std::size_t;

enum class OpKind {
    constant,
    parameter,
    matmul,
    add,
    mul,
    affine,
    concat,
    stack_rows,
    transpose,
    sigmoid,
    log_sigmoid,
    tanh,
    leaky_relu,
    softmax,
    log_softmax,
    log,
    embedding,
    slice,
    pick,
    sum,
    mean,
};

inline std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::constant: return "constant";
        case OpKind::parameter: return "parameter";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::affine: return "affine";
        case OpKind::concat: return "concat";
        case OpKind::stack_rows: return "stack_rows";
        case OpKind::transpose: return "transpose";
        case OpKind::sigmoid: return "sigmoid";
        case OpKind::log_sigmoid: return "log_sigmoid";
        case OpKind::tanh: return "tanh";
        case OpKind::leaky_relu: return "leaky_relu";
        case OpKind::softmax: return "softmax";
        case OpKind::log_softmax: return "log_softmax";
        case OpKind::log: return "log";
        case OpKind::embedding: return "embedding";
        case OpKind::slice: return "slice";
        case OpKind::pick: return "pick";
        case OpKind::sum: return "sum";
        case OpKind::mean: return "mean";
    }
    return "?";
}

using GradientMap = std::map<std::string, Tensor>;

inline constexpr double kLeakySlope = 0.01;

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Parameters are bound by reference: the graph stores a pointer to the
/// caller's tensor, which must outlive the graph. Binding the same name twice
/// returns the same node, so gradients for shared weights accumulate.
class Graph {
public:
    Graph() { nodes_.reserve(256); }

    NodeId constant(Tensor value) {
        return push(OpKind::constant, {}, std::move(value));
    }

    NodeId parameter(const std::string& name, Tensor&&) = delete;  // the tensor must outlive the graph

    NodeId parameter(const std::string& name, const Tensor& value) {
        if (auto it = params_.find(name); it != params_.end()) return it->second;
        Node n;
        n.kind = OpKind::parameter;
        n.external = &value;
        n.name = name;
        nodes_.push_back(std::move(n));
        const NodeId id = nodes_.size() - 1;
        params_.emplace(name, id);
        return id;
    }

    const Tensor& value(NodeId id) const {
        const Node& n = nodes_.at(id);
        return n.external ? *n.external : n.value;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
    std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id).inputs; }

    // (m x k)(k) -> (m), (m x k)(k x n) -> (m x n)
    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() != 2 || A.cols() != B.rows()) mismatch(OpKind::matmul, {a, b});
        const std::size_t m = A.rows(), k = A.cols();
        if (B.rank() == 1) {
            Tensor out({m});
            for (std::size_t i = 0; i < m; ++i) {
                const double* row = A.data() + i * k;
                double acc = 0.0;
                for (std::size_t j = 0; j < k; ++j) acc += row[j] * B[j];
                out[i] = acc;
            }
            return push(OpKind::matmul, {a, b}, std::move(out));
        }
        const std::size_t n = B.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double av = A.at(i, p);
                const double* brow = B.data() + p * n;
                double* orow = out.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
        return push(OpKind::matmul, {a, b}, std::move(out));
    }

    // Same shapes, or (m x n) + (n) with the vector added to every row.
    NodeId add(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        Tensor out = A;
        if (A.shape() == B.shape()) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
        } else if (A.rank() == 2 && B.rank() == 1 && A.cols() == B.size()) {
            for (std::size_t r = 0; r < A.rows(); ++r)
                for (std::size_t c = 0; c < A.cols(); ++c) out.at(r, c) += B[c];
        } else {
            mismatch(OpKind::add, {a, b});
        }
        return push(OpKind::add, {a, b}, std::move(out));
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.shape() != B.shape()) mismatch(OpKind::mul, {a, b});
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
        return push(OpKind::mul, {a, b}, std::move(out));
    }

    /// Elementwise scale * a + shift.
    NodeId affine(NodeId a, double scale, double shift = 0.0) {
        Tensor out = value(a);
        for (auto& v : out.values()) v = scale * v + shift;
        NodeId id = push(OpKind::affine, {a}, std::move(out));
        nodes_[id].s0 = scale;
        return id;
    }

    NodeId concat(std::span<const NodeId> parts) {
        std::vector<double> out;
        for (NodeId p : parts) {
            const Tensor& t = value(p);
            if (t.rank() != 1) mismatch(OpKind::concat, {parts.begin(), parts.end()});
            out.insert(out.end(), t.values().begin(), t.values().end());
        }
        if (out.empty()) throw ShapeError("concat: no inputs");
        return push(OpKind::concat, {parts.begin(), parts.end()}, Tensor::vector(std::move(out)));
    }
    NodeId concat(std::initializer_list<NodeId> parts) {
        return concat(std::span<const NodeId>(parts.begin(), parts.size()));
    }

    NodeId stack_rows(std::span<const NodeId> rows) {
        if (rows.empty()) throw ShapeError("stack_rows: no inputs");
        const std::size_t n = value(rows[0]).size();
        std::vector<double> out;
        out.reserve(rows.size() * n);
        for (NodeId r : rows) {
            const Tensor& t = value(r);
            if (t.rank() != 1 || t.size() != n) mismatch(OpKind::stack_rows, {rows.begin(), rows.end()});
            out.insert(out.end(), t.values().begin(), t.values().end());
        }
        return push(OpKind::stack_rows, {rows.begin(), rows.end()}, Tensor({rows.size(), n}, std::move(out)));
    }

    NodeId transpose(NodeId a) {
        const Tensor& A = value(a);
        if (A.rank() != 2) mismatch(OpKind::transpose, {a});
        Tensor out({A.cols(), A.rows()});
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (std::size_t c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
        return push(OpKind::transpose, {a}, std::move(out));
    }

    NodeId sigmoid(NodeId a) {
        return unary(OpKind::sigmoid, a, [](double x) { return stable_sigmoid(x); });
    }
    /// log(sigmoid(x)), finite for every finite x.
    NodeId log_sigmoid(NodeId a) {
        return unary(OpKind::log_sigmoid, a, [](double x) {
            return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
        });
    }
    NodeId tanh(NodeId a) {
        return unary(OpKind::tanh, a, [](double x) { return std::tanh(x); });
    }
    NodeId leaky_relu(NodeId a) {
        return unary(OpKind::leaky_relu, a, [](double x) { return x > 0 ? x : kLeakySlope * x; });
    }
    NodeId log(NodeId a) {
        const Tensor& A = value(a);
        for (double v : A.values()) {
            if (!(v > 0.0)) throw std::domain_error("log: non-positive input " + std::to_string(v));
        }
        return unary(OpKind::log, a, [](double x) { return std::log(x); });
    }

    NodeId softmax(NodeId a) {
        const Tensor& A = value(a);
        if (A.rank() != 1) mismatch(OpKind::softmax, {a});
        return push(OpKind::softmax, {a}, Tensor::vector(softmax_values(A.values())));
    }

    NodeId log_softmax(NodeId a) {
        const Tensor& A = value(a);
        if (A.rank() != 1) mismatch(OpKind::log_softmax, {a});
        return push(OpKind::log_softmax, {a}, Tensor::vector(log_softmax_values(A.values())));
    }

    NodeId embedding(NodeId table, std::size_t row) {
        const Tensor& T = value(table);
        if (T.rank() != 2 || row >= T.rows()) {
            throw ShapeError("embedding: row " + std::to_string(row) + " out of range for table " +
                             to_string(T.shape()));
        }
        std::vector<double> out(T.data() + row * T.cols(), T.data() + (row + 1) * T.cols());
        NodeId id = push(OpKind::embedding, {table}, Tensor::vector(std::move(out)));
        nodes_[id].aux0 = row;
        return id;
    }

    NodeId slice(NodeId a, std::size_t begin, std::size_t length) {
        const Tensor& A = value(a);
        if (A.rank() != 1 || length == 0 || begin + length > A.size()) {
            throw ShapeError("slice: [" + std::to_string(begin) + ", +" + std::to_string(length) +
                             ") out of range for " + to_string(A.shape()));
        }
        std::vector<double> out(A.values().begin() + begin, A.values().begin() + begin + length);
        NodeId id = push(OpKind::slice, {a}, Tensor::vector(std::move(out)));
        nodes_[id].aux0 = begin;
        return id;
    }

    NodeId pick(NodeId a, std::size_t index) {
        const Tensor& A = value(a);
        if (A.rank() != 1 || index >= A.size()) {
            throw ShapeError("pick: index " + std::to_string(index) + " out of range for " +
                             to_string(A.shape()));
        }
        NodeId id = push(OpKind::pick, {a}, Tensor::scalar(A[index]));
        nodes_[id].aux0 = index;
        return id;
    }

    NodeId sum(NodeId a) {
        const auto& v = value(a).values();
        return push(OpKind::sum, {a}, Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0)));
    }
    NodeId sum(std::span<const NodeId> scalars) {
        if (scalars.empty()) return constant(Tensor::scalar(0.0));
        NodeId acc = scalars[0];
        for (std::size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
        return acc;
    }

    NodeId mean(NodeId a) {
        const auto& v = value(a).values();
        return push(OpKind::mean, {a},
                    Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size())));
    }

    /// Reverse sweep from a scalar node. Returns the gradient for every bound
    /// parameter (zeros for parameters the loss does not reach).
    GradientMap backward(NodeId loss) {
        if (!value(loss).is_scalar()) {
            throw ShapeError("backward: loss must be scalar, got " + to_string(value(loss).shape()));
        }
        grads_.assign(nodes_.size(), Tensor{});
        has_grad_.assign(nodes_.size(), false);
        grad_slot(loss)[0] = 1.0;
        for (NodeId id = loss + 1; id-- > 0;) {
            if (has_grad_[id]) propagate(id);
        }
        GradientMap out;
        for (const auto& [name, id] : params_) {
            out.emplace(name, has_grad_[id] ? grads_[id] : Tensor(value(id).shape()));
        }
        return out;
    }

    /// Gradient of a node after backward(); zeros if unreached.
    Tensor gradient(NodeId id) const {
        if (id < has_grad_.size() && has_grad_[id]) return grads_[id];
        return Tensor(value(id).shape());
    }

    static double stable_sigmoid(double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    static std::vector<double> log_softmax_values(const std::vector<double>& x) {
        const double mx = *std::max_element(x.begin(), x.end());
        double z = 0.0;
        for (double v : x) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        std::vector<double> out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lse;
        return out;
    }

    static std::vector<double> softmax_values(const std::vector<double>& x) {
        const double mx = *std::max_element(x.begin(), x.end());
        std::vector<double> out(x.size());
        double z = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) z += (out[i] = std::exp(x[i] - mx));
        for (double& v : out) v /= z;
        return out;
    }

private:
    struct Node {
        OpKind kind = OpKind::constant;
        std::vector<NodeId> inputs;
        Tensor value;
        const Tensor* external = nullptr;
        std::string name;
        std::size_t aux0 = 0;
        double s0 = 0.0;
    };

    NodeId push(OpKind kind, std::vector<NodeId> inputs, Tensor value) {
        Node n;
        n.kind = kind;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    template <class F>
    NodeId unary(OpKind kind, NodeId a, F f) {
        Tensor out = value(a);
        for (auto& v : out.values()) v = f(v);
        return push(kind, {a}, std::move(out));
    }

    [[noreturn]] void mismatch(OpKind kind, std::vector<NodeId> ids) const {
        std::string msg = std::string(op_name(kind)) + ": incompatible shapes";
        for (NodeId id : ids) msg += " " + to_string(value(id).shape());
        throw ShapeError(msg);
    }

    Tensor& grad_slot(NodeId id) {
        if (!has_grad_[id]) {
            grads_[id] = Tensor(value(id).shape());
            has_grad_[id] = true;
        }
        return grads_[id];
    }

    void propagate(NodeId id) {
        const Node& n = nodes_[id];
        const Tensor& g = grads_[id];
        const Tensor& y = value(id);
        switch (n.kind) {
            case OpKind::constant:
            case OpKind::parameter:
                break;
            case OpKind::matmul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& gA = grad_slot(n.inputs[0]);
                Tensor& gB = grad_slot(n.inputs[1]);
                const std::size_t m = A.rows(), k = A.cols();
                if (B.rank() == 1) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const double gi = g[i];
                        if (gi == 0.0) continue;
                        double* garow = gA.data() + i * k;
                        const double* arow = A.data() + i * k;
                        for (std::size_t j = 0; j < k; ++j) {
                            garow[j] += gi * B[j];
                            gB[j] += gi * arow[j];
                        }
                    }
                } else {
                    const std::size_t cols = B.cols();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t p = 0; p < k; ++p) {
                            double accA = 0.0;
                            const double av = A.at(i, p);
                            for (std::size_t j = 0; j < cols; ++j) {
                                accA += g.at(i, j) * B.at(p, j);
                                gB.at(p, j) += av * g.at(i, j);
                            }
                            gA.at(i, p) += accA;
                        }
                }
                break;
            }
            case OpKind::add: {
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i];
                Tensor& gB = grad_slot(n.inputs[1]);
                if (gB.size() == g.size()) {
                    for (std::size_t i = 0; i < g.size(); ++i) gB[i] += g[i];
                } else {
                    for (std::size_t r = 0; r < g.rows(); ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c) gB[c] += g.at(r, c);
                }
                break;
            }
            case OpKind::mul: {
                const Tensor& A = value(n.inputs[0]);
                const Tensor& B = value(n.inputs[1]);
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * B[i];
                Tensor& gB = grad_slot(n.inputs[1]);
                for (std::size_t i = 0; i < g.size(); ++i) gB[i] += g[i] * A[i];
                break;
            }
            case OpKind::affine: {
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += n.s0 * g[i];
                break;
            }
            case OpKind::concat:
            case OpKind::stack_rows: {
                std::size_t offset = 0;
                for (NodeId in : n.inputs) {
                    Tensor& gi = grad_slot(in);
                    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[offset + i];
                    offset += gi.size();
                }
                break;
            }
            case OpKind::transpose: {
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) gA.at(c, r) += g.at(r, c);
                break;
            }
            case OpKind::sigmoid: {
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * y[i] * (1.0 - y[i]);
                break;
            }
            case OpKind::log_sigmoid: {
                const Tensor& A = value(n.inputs[0]);
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * stable_sigmoid(-A[i]);
                break;
            }
            case OpKind::tanh: {
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case OpKind::leaky_relu: {
                const Tensor& A = value(n.inputs[0]);
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * (A[i] > 0 ? 1.0 : kLeakySlope);
                break;
            }
            case OpKind::log: {
                const Tensor& A = value(n.inputs[0]);
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] / A[i];
                break;
            }
            case OpKind::softmax: {
                double dot = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += y[i] * (g[i] - dot);
                break;
            }
            case OpKind::log_softmax: {
                double total = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) total += g[i];
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] - std::exp(y[i]) * total;
                break;
            }
            case OpKind::embedding: {
                Tensor& gT = grad_slot(n.inputs[0]);
                double* row = gT.data() + n.aux0 * gT.cols();
                for (std::size_t i = 0; i < g.size(); ++i) row[i] += g[i];
                break;
            }
            case OpKind::slice: {
                Tensor& gA = grad_slot(n.inputs[0]);
                for (std::size_t i = 0; i < g.size(); ++i) gA[n.aux0 + i] += g[i];
                break;
            }
            case OpKind::pick: {
                grad_slot(n.inputs[0])[n.aux0] += g[0];
                break;
            }
            case OpKind::sum: {
                Tensor& gA = grad_slot(n.inputs[0]);
                for (auto& v : gA.values()) v += g[0];
                break;
            }
            case OpKind::mean: {
                Tensor& gA = grad_slot(n.inputs[0]);
                const double s = g[0] / static_cast<double>(gA.size());
                for (auto& v : gA.values()) v += s;
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::unordered_map<std::string, NodeId> params_;
    std::vector<Tensor> grads_;
    std::vector<bool> has_grad_;
};

}  // namespace ocdmlc
