#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace fustal::diffnum {

// Dense row-major array with a same-shape gradient accumulator. Production
// code uses Tensor (32-bit); the double instantiation exists so finite
// difference checks are not swamped by storage rounding.
template <class Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<std::size_t> shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(element_count(shape_), fill), grad_(data_.size(), Real(0)) {}
  BasicTensor(std::vector<std::size_t> shape, std::vector<Real> values)
      : shape_(std::move(shape)), data_(std::move(values)), grad_(data_.size(), Real(0)) {
    if (data_.size() != element_count(shape_)) throw_size_mismatch();
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }
  std::span<Real> grad() noexcept { return grad_; }
  std::span<const Real> grad() const noexcept { return grad_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }
  Real& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  Real at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void zero_grad() { std::fill(grad_.begin(), grad_.end(), Real(0)); }
  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  [[noreturn]] void throw_size_mismatch() const;

  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
  std::vector<Real> grad_;
};

using Tensor = BasicTensor<float>;

}  // namespace fustal::diffnum

#include "fustal/errors.hpp"

template <class Real>
void fustal::diffnum::BasicTensor<Real>::throw_size_mismatch() const {
  throw ContractError("tensor " + shape_string() + " given " + std::to_string(data_.size()) +
                      " values");
}
