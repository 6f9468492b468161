#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedmekt {

// Thrown when operand shapes are incompatible. Message carries both shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a non-finite value shows up where the math requires finite input.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

// Dense row-major float64 tensor. Rank 0 (empty shape) is a scalar with one
// element. There is no view machinery: every tensor owns its buffer.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor scalar(double v);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    std::size_t rank() const { return shape_.size(); }

    // Rank-2 helpers.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }
    double scalar_value() const;

    bool all_finite() const;

    // Marks the tensor as a trainable leaf when lifted onto a tape.
    bool requires_grad = false;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_numel(const Shape& s);

}  // namespace fedmekt
