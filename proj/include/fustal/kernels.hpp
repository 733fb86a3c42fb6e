#pragma once

// Hot loops of both networks: same-length 1-D convolution and the per-row
// affine map. Every kernel exists twice: `serial` is the plain reference used
// by tests, `parallel` splits the independent output elements across OpenMP
// threads. Each output element is reduced in the same order in both, so the
// two variants agree bit-for-bit regardless of thread count.
//
// Layouts (row-major):
//   x      [length x in]
//   kernel [out x width x in]     weight [out x in]
//   y      [length x out]
// Accumulation is always in double.

#include <cstddef>
#include <span>

namespace fustal::kernels {

struct Conv1dDims {
  std::size_t length = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t width = 0;

  // Zero padding that keeps the output length equal to the input length.
  std::size_t left_pad() const noexcept { return (width - 1) / 2; }
};

struct AffineDims {
  std::size_t rows = 0;
  std::size_t in_features = 0;
  std::size_t out_features = 0;
};

#define FUSTAL_KERNEL_DECLS                                                                     \
  template <class Real>                                                                         \
  void conv1d_forward(const Conv1dDims& d, std::span<const Real> x, std::span<const Real> kernel, \
                      std::span<const Real> bias, std::span<Real> y);                          \
  /* dx += dL/dx */                                                                             \
  template <class Real>                                                                         \
  void conv1d_backward_input(const Conv1dDims& d, std::span<const Real> kernel,                 \
                             std::span<const Real> dy, std::span<Real> dx);                     \
  /* dkernel += dL/dkernel, dbias += dL/dbias */                                                \
  template <class Real>                                                                         \
  void conv1d_backward_params(const Conv1dDims& d, std::span<const Real> x,                     \
                              std::span<const Real> dy, std::span<Real> dkernel,                \
                              std::span<Real> dbias);                                           \
  template <class Real>                                                                         \
  void affine_forward(const AffineDims& d, std::span<const Real> x, std::span<const Real> weight, \
                      std::span<const Real> bias, std::span<Real> y);                          \
  template <class Real>                                                                         \
  void affine_backward_input(const AffineDims& d, std::span<const Real> weight,                 \
                             std::span<const Real> dy, std::span<Real> dx);                     \
  template <class Real>                                                                         \
  void affine_backward_params(const AffineDims& d, std::span<const Real> x,                     \
                              std::span<const Real> dy, std::span<Real> dweight,                \
                              std::span<Real> dbias);

namespace serial {
FUSTAL_KERNEL_DECLS
}  // namespace serial

namespace parallel {
FUSTAL_KERNEL_DECLS
}  // namespace parallel

#undef FUSTAL_KERNEL_DECLS

// Number of OpenMP threads the parallel kernels will use.
int max_threads();

}  // namespace fustal::kernels
