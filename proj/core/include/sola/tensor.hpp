#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

namespace sola {

/// Dense row-major tensor of doubles. Shapes are immutable after
/// construction; all layer code treats tensors as values.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);
    /// 2-D tensor from nested lists, row-major.
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double max_abs() const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

/// Samples i.i.d. N(0, stddev^2) entries from `rng`.
Tensor randn(std::mt19937_64& rng, std::vector<std::size_t> shape, double stddev = 1.0);

/// Largest |a-b| over all entries; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Throws std::invalid_argument naming `where` and both shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace sola
