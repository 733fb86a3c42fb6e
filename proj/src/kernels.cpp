#include "fustal/kernels.hpp"

#include <omp.h>

#include <cstdint>
#include <vector>

namespace fustal::kernels {

namespace {

// Row-level bodies shared by both variants; only the loop driver differs.

template <class Real>
void conv1d_forward_row(const Conv1dDims& d, std::span<const Real> x, std::span<const Real> kernel,
                        std::span<const Real> bias, std::span<Real> y, std::size_t t) {
  const auto pad = static_cast<std::ptrdiff_t>(d.left_pad());
  const auto len = static_cast<std::ptrdiff_t>(d.length);
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    double acc = bias.empty() ? 0.0 : static_cast<double>(bias[o]);
    for (std::size_t j = 0; j < d.width; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
      if (src < 0 || src >= len) continue;
      const Real* xr = x.data() + static_cast<std::size_t>(src) * d.in_channels;
      const Real* kr = kernel.data() + (o * d.width + j) * d.in_channels;
      for (std::size_t i = 0; i < d.in_channels; ++i)
        acc += static_cast<double>(kr[i]) * static_cast<double>(xr[i]);
    }
    y[t * d.out_channels + o] = static_cast<Real>(acc);
  }
}

template <class Real>
void conv1d_backward_input_row(const Conv1dDims& d, std::span<const Real> kernel,
                               std::span<const Real> dy, std::span<Real> dx, std::size_t s) {
  // dx[s, i] = sum_{j, o} K[o, j, i] * dy[s - j + pad, o]
  const auto pad = static_cast<std::ptrdiff_t>(d.left_pad());
  const auto len = static_cast<std::ptrdiff_t>(d.length);
  thread_local std::vector<double> acc;
  acc.assign(d.in_channels, 0.0);
  for (std::size_t j = 0; j < d.width; ++j) {
    const auto t = static_cast<std::ptrdiff_t>(s) - static_cast<std::ptrdiff_t>(j) + pad;
    if (t < 0 || t >= len) continue;
    const Real* dyr = dy.data() + static_cast<std::size_t>(t) * d.out_channels;
    for (std::size_t o = 0; o < d.out_channels; ++o) {
      const double g = static_cast<double>(dyr[o]);
      if (g == 0.0) continue;
      const Real* kr = kernel.data() + (o * d.width + j) * d.in_channels;
      for (std::size_t i = 0; i < d.in_channels; ++i) acc[i] += g * static_cast<double>(kr[i]);
    }
  }
  Real* out = dx.data() + s * d.in_channels;
  for (std::size_t i = 0; i < d.in_channels; ++i)
    out[i] = static_cast<Real>(static_cast<double>(out[i]) + acc[i]);
}

template <class Real>
void conv1d_backward_params_channel(const Conv1dDims& d, std::span<const Real> x,
                                    std::span<const Real> dy, std::span<Real> dkernel,
                                    std::span<Real> dbias, std::size_t o) {
  const auto pad = static_cast<std::ptrdiff_t>(d.left_pad());
  const auto len = static_cast<std::ptrdiff_t>(d.length);
  thread_local std::vector<double> acc;
  acc.assign(d.width * d.in_channels, 0.0);
  double bias_acc = 0.0;
  for (std::size_t t = 0; t < d.length; ++t) {
    const double g = static_cast<double>(dy[t * d.out_channels + o]);
    bias_acc += g;
    if (g == 0.0) continue;
    for (std::size_t j = 0; j < d.width; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
      if (src < 0 || src >= len) continue;
      const Real* xr = x.data() + static_cast<std::size_t>(src) * d.in_channels;
      double* ar = acc.data() + j * d.in_channels;
      for (std::size_t i = 0; i < d.in_channels; ++i) ar[i] += g * static_cast<double>(xr[i]);
    }
  }
  Real* out = dkernel.data() + o * d.width * d.in_channels;
  for (std::size_t n = 0; n < acc.size(); ++n)
    out[n] = static_cast<Real>(static_cast<double>(out[n]) + acc[n]);
  if (!dbias.empty()) dbias[o] = static_cast<Real>(static_cast<double>(dbias[o]) + bias_acc);
}

template <class Real>
void affine_forward_row(const AffineDims& d, std::span<const Real> x, std::span<const Real> w,
                        std::span<const Real> b, std::span<Real> y, std::size_t r) {
  const Real* xr = x.data() + r * d.in_features;
  for (std::size_t o = 0; o < d.out_features; ++o) {
    const Real* wr = w.data() + o * d.in_features;
    double acc = b.empty() ? 0.0 : static_cast<double>(b[o]);
    for (std::size_t i = 0; i < d.in_features; ++i)
      acc += static_cast<double>(wr[i]) * static_cast<double>(xr[i]);
    y[r * d.out_features + o] = static_cast<Real>(acc);
  }
}

template <class Real>
void affine_backward_input_row(const AffineDims& d, std::span<const Real> w,
                               std::span<const Real> dy, std::span<Real> dx, std::size_t r) {
  thread_local std::vector<double> acc;
  acc.assign(d.in_features, 0.0);
  const Real* dyr = dy.data() + r * d.out_features;
  for (std::size_t o = 0; o < d.out_features; ++o) {
    const double g = static_cast<double>(dyr[o]);
    if (g == 0.0) continue;
    const Real* wr = w.data() + o * d.in_features;
    for (std::size_t i = 0; i < d.in_features; ++i) acc[i] += g * static_cast<double>(wr[i]);
  }
  Real* out = dx.data() + r * d.in_features;
  for (std::size_t i = 0; i < d.in_features; ++i)
    out[i] = static_cast<Real>(static_cast<double>(out[i]) + acc[i]);
}

template <class Real>
void affine_backward_params_output(const AffineDims& d, std::span<const Real> x,
                                   std::span<const Real> dy, std::span<Real> dw,
                                   std::span<Real> db, std::size_t o) {
  thread_local std::vector<double> acc;
  acc.assign(d.in_features, 0.0);
  double bias_acc = 0.0;
  for (std::size_t r = 0; r < d.rows; ++r) {
    const double g = static_cast<double>(dy[r * d.out_features + o]);
    bias_acc += g;
    if (g == 0.0) continue;
    const Real* xr = x.data() + r * d.in_features;
    for (std::size_t i = 0; i < d.in_features; ++i) acc[i] += g * static_cast<double>(xr[i]);
  }
  Real* out = dw.data() + o * d.in_features;
  for (std::size_t i = 0; i < d.in_features; ++i)
    out[i] = static_cast<Real>(static_cast<double>(out[i]) + acc[i]);
  if (!db.empty()) db[o] = static_cast<Real>(static_cast<double>(db[o]) + bias_acc);
}

}  // namespace

namespace serial {

template <class Real>
void conv1d_forward(const Conv1dDims& d, std::span<const Real> x, std::span<const Real> kernel,
                    std::span<const Real> bias, std::span<Real> y) {
  for (std::size_t t = 0; t < d.length; ++t) conv1d_forward_row(d, x, kernel, bias, y, t);
}

template <class Real>
void conv1d_backward_input(const Conv1dDims& d, std::span<const Real> kernel,
                           std::span<const Real> dy, std::span<Real> dx) {
  for (std::size_t s = 0; s < d.length; ++s) conv1d_backward_input_row(d, kernel, dy, dx, s);
}

template <class Real>
void conv1d_backward_params(const Conv1dDims& d, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dkernel, std::span<Real> dbias) {
  for (std::size_t o = 0; o < d.out_channels; ++o)
    conv1d_backward_params_channel(d, x, dy, dkernel, dbias, o);
}

template <class Real>
void affine_forward(const AffineDims& d, std::span<const Real> x, std::span<const Real> weight,
                    std::span<const Real> bias, std::span<Real> y) {
  for (std::size_t r = 0; r < d.rows; ++r) affine_forward_row(d, x, weight, bias, y, r);
}

template <class Real>
void affine_backward_input(const AffineDims& d, std::span<const Real> weight,
                           std::span<const Real> dy, std::span<Real> dx) {
  for (std::size_t r = 0; r < d.rows; ++r) affine_backward_input_row(d, weight, dy, dx, r);
}

template <class Real>
void affine_backward_params(const AffineDims& d, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dweight, std::span<Real> dbias) {
  for (std::size_t o = 0; o < d.out_features; ++o)
    affine_backward_params_output(d, x, dy, dweight, dbias, o);
}

}  // namespace serial

namespace parallel {

template <class Real>
void conv1d_forward(const Conv1dDims& d, std::span<const Real> x, std::span<const Real> kernel,
                    std::span<const Real> bias, std::span<Real> y) {
  const auto n = static_cast<std::int64_t>(d.length);
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < n; ++t)
    conv1d_forward_row(d, x, kernel, bias, y, static_cast<std::size_t>(t));
}

template <class Real>
void conv1d_backward_input(const Conv1dDims& d, std::span<const Real> kernel,
                           std::span<const Real> dy, std::span<Real> dx) {
  const auto n = static_cast<std::int64_t>(d.length);
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < n; ++s)
    conv1d_backward_input_row(d, kernel, dy, dx, static_cast<std::size_t>(s));
}

template <class Real>
void conv1d_backward_params(const Conv1dDims& d, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dkernel, std::span<Real> dbias) {
  const auto n = static_cast<std::int64_t>(d.out_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < n; ++o)
    conv1d_backward_params_channel(d, x, dy, dkernel, dbias, static_cast<std::size_t>(o));
}

template <class Real>
void affine_forward(const AffineDims& d, std::span<const Real> x, std::span<const Real> weight,
                    std::span<const Real> bias, std::span<Real> y) {
  const auto n = static_cast<std::int64_t>(d.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < n; ++r)
    affine_forward_row(d, x, weight, bias, y, static_cast<std::size_t>(r));
}

template <class Real>
void affine_backward_input(const AffineDims& d, std::span<const Real> weight,
                           std::span<const Real> dy, std::span<Real> dx) {
  const auto n = static_cast<std::int64_t>(d.rows);
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < n; ++r)
    affine_backward_input_row(d, weight, dy, dx, static_cast<std::size_t>(r));
}

template <class Real>
void affine_backward_params(const AffineDims& d, std::span<const Real> x, std::span<const Real> dy,
                            std::span<Real> dweight, std::span<Real> dbias) {
  const auto n = static_cast<std::int64_t>(d.out_features);
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < n; ++o)
    affine_backward_params_output(d, x, dy, dweight, dbias, static_cast<std::size_t>(o));
}

}  // namespace parallel

int max_threads() { return omp_get_max_threads(); }

#define FUSTAL_INSTANTIATE(NS, Real)                                                            \
  template void NS::conv1d_forward<Real>(const Conv1dDims&, std::span<const Real>,             \
                                         std::span<const Real>, std::span<const Real>,         \
                                         std::span<Real>);                                      \
  template void NS::conv1d_backward_input<Real>(const Conv1dDims&, std::span<const Real>,      \
                                                std::span<const Real>, std::span<Real>);        \
  template void NS::conv1d_backward_params<Real>(const Conv1dDims&, std::span<const Real>,     \
                                                 std::span<const Real>, std::span<Real>,       \
                                                 std::span<Real>);                              \
  template void NS::affine_forward<Real>(const AffineDims&, std::span<const Real>,             \
                                         std::span<const Real>, std::span<const Real>,         \
                                         std::span<Real>);                                      \
  template void NS::affine_backward_input<Real>(const AffineDims&, std::span<const Real>,      \
                                                std::span<const Real>, std::span<Real>);        \
  template void NS::affine_backward_params<Real>(const AffineDims&, std::span<const Real>,     \
                                                 std::span<const Real>, std::span<Real>,       \
                                                 std::span<Real>);

FUSTAL_INSTANTIATE(serial, float)
FUSTAL_INSTANTIATE(serial, double)
FUSTAL_INSTANTIATE(parallel, float)
FUSTAL_INSTANTIATE(parallel, double)

#undef FUSTAL_INSTANTIATE

}  // namespace fustal::kernels
