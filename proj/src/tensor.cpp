#include "css/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "css/errors.hpp"

namespace css {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (std::size_t d : shape_) {
    if (d == 0) throw std::invalid_argument("Tensor: zero extent in shape");
  }
}

Tensor::Tensor(std::initializer_list<std::size_t> shape, double fill)
    : Tensor(std::vector<std::size_t>(shape), fill) {}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: data length does not match shape");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(values);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::require_finite(const char* what) const {
  if (!all_finite()) {
    throw non_finite_error(std::string("non-finite values in ") + what);
  }
}

}  // namespace css
