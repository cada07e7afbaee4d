#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ocdmlc {

/// Raised when an operation receives operands with incompatible shapes.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

/// Dense row-major array of doubles. Rank 1 is a vector, rank 2 a matrix;
/// a scalar is the vector of shape [1].
class Tensor {
public:
    Tensor() : shape_{1}, values_(1, 0.0) {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_shape();
        values_.assign(element_count(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        validate_shape();
        if (values_.size() != element_count(shape_)) {
            throw ShapeError("tensor: " + std::to_string(values_.size()) +
                             " values do not fill shape " + to_string(shape_));
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor vector(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return values_.size(); }
    std::size_t rows() const noexcept { return shape_[0]; }
    std::size_t cols() const noexcept { return rank() == 2 ? shape_[1] : 1; }
    bool is_scalar() const noexcept { return values_.size() == 1; }

    std::vector<double>& values() noexcept { return values_; }
    const std::vector<double>& values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    double item() const {
        if (!is_scalar()) throw ShapeError("tensor: item() on shape " + to_string(shape_));
        return values_[0];
    }

    bool operator==(const Tensor&) const = default;

private:
    void validate_shape() const {
        if (shape_.empty() || shape_.size() > 2) {
            throw ShapeError("tensor: only rank 1 and 2 are supported, got " + to_string(shape_));
        }
        for (auto d : shape_) {
            if (d == 0) throw ShapeError("tensor: zero dimension in " + to_string(shape_));
        }
    }

    Shape shape_;
    std::vector<double> values_;
};

}  // namespace ocdmlc
