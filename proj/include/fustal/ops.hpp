#pragma once

// Differentiable building blocks. Each forward returns a fresh tensor; the
// matching *_backward reads the upstream gradient from the output's grad and
// accumulates into the inputs' grad fields.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "fustal/errors.hpp"
#include "fustal/kernels.hpp"
#include "fustal/tensor.hpp"

namespace fustal::diffnum {

namespace detail {

[[noreturn]] inline void shape_mismatch(const std::string& op, const std::string& a,
                                        const std::string& b) {
  throw ContractError(op + ": shape mismatch " + a + " vs " + b);
}

template <class Real>
void require_rank(const std::string& op, const BasicTensor<Real>& t, std::size_t rank) {
  if (t.rank() != rank)
    throw ContractError(op + ": expected rank " + std::to_string(rank) + ", got " +
                        t.shape_string());
}

template <class Real>
void require_same_shape(const std::string& op, const BasicTensor<Real>& a,
                        const BasicTensor<Real>& b) {
  if (a.shape() != b.shape()) shape_mismatch(op, a.shape_string(), b.shape_string());
}

// Indices of the k largest entries of a strided view, ties broken by lower index.
template <class Real>
std::vector<std::size_t> topk_indices(const Real* base, std::size_t n, std::size_t stride,
                                      std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, n);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const Real va = base[a * stride];
                      const Real vb = base[b * stride];
                      return va > vb || (va == vb && a < b);
                    });
  idx.resize(k);
  return idx;
}

struct ReduceLayout {
  std::size_t outer = 1;   // number of independent reductions
  std::size_t length = 1;  // elements per reduction
  std::size_t stride = 1;  // distance between consecutive elements
  std::size_t step = 1;    // distance between consecutive reductions
};

template <class Real>
ReduceLayout reduce_layout(const std::string& op, const BasicTensor<Real>& x, std::size_t axis) {
  if (x.rank() == 1 && axis == 0) return {1, x.dim(0), 1, 0};
  if (x.rank() == 2 && axis == 0) return {x.dim(1), x.dim(0), x.dim(1), 1};
  if (x.rank() == 2 && axis == 1) return {x.dim(0), x.dim(1), 1, x.dim(1)};
  throw ContractError(op + ": unsupported axis " + std::to_string(axis) + " for " +
                      x.shape_string());
}

}  // namespace detail

template <class Real>
BasicTensor<Real> affine(const BasicTensor<Real>& x, const BasicTensor<Real>& w,
                         const BasicTensor<Real>& b) {
  detail::require_rank("affine", x, 2);
  detail::require_rank("affine", w, 2);
  if (x.dim(1) != w.dim(1)) detail::shape_mismatch("affine", x.shape_string(), w.shape_string());
  if (b.rank() != 1 || b.dim(0) != w.dim(0))
    detail::shape_mismatch("affine", w.shape_string(), b.shape_string());
  const kernels::AffineDims d{x.dim(0), x.dim(1), w.dim(0)};
  BasicTensor<Real> y({d.rows, d.out_features});
  kernels::parallel::affine_forward<Real>(d, x.data(), w.data(), b.data(), y.data());
  return y;
}

template <class Real>
void affine_backward(BasicTensor<Real>& x, BasicTensor<Real>& w, BasicTensor<Real>& b,
                     const BasicTensor<Real>& y, bool propagate_input = true) {
  const kernels::AffineDims d{x.dim(0), x.dim(1), w.dim(0)};
  if (y.rank() != 2 || y.dim(0) != d.rows || y.dim(1) != d.out_features)
    detail::shape_mismatch("affine_backward", x.shape_string(), y.shape_string());
  if (propagate_input) kernels::parallel::affine_backward_input<Real>(d, w.data(), y.grad(), x.grad());
  kernels::parallel::affine_backward_params<Real>(d, x.data(), y.grad(), w.grad(), b.grad());
}

// x [T x in], kernel [out x width x in], bias [out] -> [T x out], zero padded.
template <class Real>
BasicTensor<Real> conv1d(const BasicTensor<Real>& x, const BasicTensor<Real>& k,
                         const BasicTensor<Real>& b) {
  detail::require_rank("conv1d", x, 2);
  detail::require_rank("conv1d", k, 3);
  if (x.dim(1) != k.dim(2)) detail::shape_mismatch("conv1d", x.shape_string(), k.shape_string());
  if (b.rank() != 1 || b.dim(0) != k.dim(0))
    detail::shape_mismatch("conv1d", k.shape_string(), b.shape_string());
  const kernels::Conv1dDims d{x.dim(0), x.dim(1), k.dim(0), k.dim(1)};
  BasicTensor<Real> y({d.length, d.out_channels});
  kernels::parallel::conv1d_forward<Real>(d, x.data(), k.data(), b.data(), y.data());
  return y;
}

template <class Real>
void conv1d_backward(BasicTensor<Real>& x, BasicTensor<Real>& k, BasicTensor<Real>& b,
                     const BasicTensor<Real>& y, bool propagate_input = true) {
  const kernels::Conv1dDims d{x.dim(0), x.dim(1), k.dim(0), k.dim(1)};
  if (y.rank() != 2 || y.dim(0) != d.length || y.dim(1) != d.out_channels)
    detail::shape_mismatch("conv1d_backward", x.shape_string(), y.shape_string());
  if (propagate_input) kernels::parallel::conv1d_backward_input<Real>(d, k.data(), y.grad(), x.grad());
  kernels::parallel::conv1d_backward_params<Real>(d, x.data(), y.grad(), k.grad(), b.grad());
}

template <class Real>
BasicTensor<Real> relu(const BasicTensor<Real>& x) {
  BasicTensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
  return y;
}

template <class Real>
void relu_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y) {
  detail::require_same_shape("relu_backward", x, y);
  auto gx = x.grad();
  auto gy = y.grad();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] > Real(0)) gx[i] += gy[i];
}

template <class Real>
Real sigmoid_scalar(Real v) {
  if (v >= Real(0)) return Real(1) / (Real(1) + std::exp(-v));
  const Real e = std::exp(v);
  return e / (Real(1) + e);
}

template <class Real>
BasicTensor<Real> sigmoid(const BasicTensor<Real>& x) {
  BasicTensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
  return y;
}

template <class Real>
void sigmoid_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y) {
  detail::require_same_shape("sigmoid_backward", x, y);
  auto gx = x.grad();
  auto gy = y.grad();
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * y[i] * (Real(1) - y[i]);
}

// log(1 + e^x), computed without overflow.
template <class Real>
Real softplus_scalar(Real v) {
  return v > Real(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

template <class Real>
BasicTensor<Real> softplus(const BasicTensor<Real>& x) {
  BasicTensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = softplus_scalar(x[i]);
  return y;
}

template <class Real>
void softplus_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y) {
  detail::require_same_shape("softplus_backward", x, y);
  auto gx = x.grad();
  auto gy = y.grad();
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * sigmoid_scalar(x[i]);
}

template <class Real>
BasicTensor<Real> softmax(const BasicTensor<Real>& x, std::size_t axis) {
  const auto L = detail::reduce_layout("softmax", x, axis);
  BasicTensor<Real> y(x.shape());
  for (std::size_t o = 0; o < L.outer; ++o) {
    const std::size_t base = o * L.step;
    double mx = -INFINITY;
    for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, double(x[base + i * L.stride]));
    double z = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) z += std::exp(double(x[base + i * L.stride]) - mx);
    for (std::size_t i = 0; i < L.length; ++i)
      y[base + i * L.stride] = static_cast<Real>(std::exp(double(x[base + i * L.stride]) - mx) / z);
  }
  return y;
}

template <class Real>
void softmax_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y, std::size_t axis) {
  detail::require_same_shape("softmax_backward", x, y);
  const auto L = detail::reduce_layout("softmax_backward", x, axis);
  auto gx = x.grad();
  auto gy = y.grad();
  for (std::size_t o = 0; o < L.outer; ++o) {
    const std::size_t base = o * L.step;
    double dot = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) {
      const auto n = base + i * L.stride;
      dot += double(gy[n]) * double(y[n]);
    }
    for (std::size_t i = 0; i < L.length; ++i) {
      const auto n = base + i * L.stride;
      gx[n] += static_cast<Real>(double(y[n]) * (double(gy[n]) - dot));
    }
  }
}

template <class Real>
BasicTensor<Real> sum(const BasicTensor<Real>& x) {
  double acc = 0.0;
  for (auto v : x.data()) acc += double(v);
  return BasicTensor<Real>({1}, static_cast<Real>(acc));
}

template <class Real>
void sum_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y) {
  const Real g = y.grad()[0];
  for (auto& v : x.grad()) v += g;
}

template <class Real>
BasicTensor<Real> mean(const BasicTensor<Real>& x) {
  if (x.size() == 0) throw ContractError("mean: empty tensor");
  double acc = 0.0;
  for (auto v : x.data()) acc += double(v);
  return BasicTensor<Real>({1}, static_cast<Real>(acc / double(x.size())));
}

template <class Real>
void mean_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y) {
  const Real g = static_cast<Real>(double(y.grad()[0]) / double(x.size()));
  for (auto& v : x.grad()) v += g;
}

// Mean of the k largest values along `axis`; the reduced axis disappears.
template <class Real>
BasicTensor<Real> topk_mean(const BasicTensor<Real>& x, std::size_t k, std::size_t axis) {
  const auto L = detail::reduce_layout("topk_mean", x, axis);
  if (k == 0 || k > L.length)
    throw ContractError("topk_mean: k=" + std::to_string(k) + " invalid for " + x.shape_string());
  BasicTensor<Real> y({L.outer});
  for (std::size_t o = 0; o < L.outer; ++o) {
    const Real* base = x.data().data() + o * L.step;
    double acc = 0.0;
    for (auto i : detail::topk_indices(base, L.length, L.stride, k)) acc += double(base[i * L.stride]);
    y[o] = static_cast<Real>(acc / double(k));
  }
  return y;
}

template <class Real>
void topk_mean_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y, std::size_t k,
                        std::size_t axis) {
  const auto L = detail::reduce_layout("topk_mean_backward", x, axis);
  if (y.size() != L.outer) detail::shape_mismatch("topk_mean_backward", x.shape_string(), y.shape_string());
  auto gx = x.grad();
  for (std::size_t o = 0; o < L.outer; ++o) {
    const Real* base = x.data().data() + o * L.step;
    const Real g = static_cast<Real>(double(y.grad()[o]) / double(k));
    for (auto i : detail::topk_indices(base, L.length, L.stride, k)) gx[o * L.step + i * L.stride] += g;
  }
}

// Row-wise x / ||x||.
template <class Real>
BasicTensor<Real> l2_normalize_rows(const BasicTensor<Real>& x) {
  detail::require_rank("l2_normalize_rows", x, 2);
  BasicTensor<Real> y(x.shape());
  const std::size_t cols = x.dim(1);
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    double nrm = 0.0;
    for (std::size_t c = 0; c < cols; ++c) nrm += double(x.at(r, c)) * double(x.at(r, c));
    nrm = std::max(std::sqrt(nrm), 1e-12);
    for (std::size_t c = 0; c < cols; ++c) y.at(r, c) = static_cast<Real>(double(x.at(r, c)) / nrm);
  }
  return y;
}

template <class Real>
void l2_normalize_rows_backward(BasicTensor<Real>& x, const BasicTensor<Real>& y) {
  detail::require_same_shape("l2_normalize_rows_backward", x, y);
  const std::size_t cols = x.dim(1);
  auto gx = x.grad();
  auto gy = y.grad();
  for (std::size_t r = 0; r < x.dim(0); ++r) {
    double nrm = 0.0, dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      nrm += double(x.at(r, c)) * double(x.at(r, c));
      dot += double(gy[r * cols + c]) * double(y.at(r, c));
    }
    nrm = std::max(std::sqrt(nrm), 1e-12);
    for (std::size_t c = 0; c < cols; ++c)
      gx[r * cols + c] += static_cast<Real>((double(gy[r * cols + c]) - double(y.at(r, c)) * dot) / nrm);
  }
}

}  // namespace fustal::diffnum
