#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace css {

/// Dense row-major tensor of 64-bit floats. All shapes are dynamic; this is a
/// correctness-first container for desk-scale models, not a BLAS replacement.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0);

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major indexing; bounds are the caller's responsibility.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Pointer to the length-`dim(rank-1)` row at the given leading indices.
  double* row(std::size_t i) { return data_.data() + i * shape_.back(); }
  const double* row(std::size_t i) const { return data_.data() + i * shape_.back(); }
  double* row(std::size_t i, std::size_t j) {
    return data_.data() + (i * shape_[1] + j) * shape_[2];
  }
  const double* row(std::size_t i, std::size_t j) const {
    return data_.data() + (i * shape_[1] + j) * shape_[2];
  }

  void fill(double v);
  void zero() { fill(0.0); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  /// Throws non_finite_error naming `what` if any element is NaN/Inf.
  void require_finite(const char* what) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace css
