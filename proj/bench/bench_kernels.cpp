// Serial reference vs OpenMP kernels at network-sized shapes.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fustal/kernels.hpp"

namespace k = fustal::kernels;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

k::Conv1dDims conv_dims(const benchmark::State& state) {
  return {static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
          static_cast<std::size_t>(state.range(1)), 3};
}

template <bool Parallel>
void BM_Conv1dForward(benchmark::State& state) {
  const auto d = conv_dims(state);
  const auto x = random_values(d.length * d.in_channels, 1);
  const auto w = random_values(d.out_channels * d.width * d.in_channels, 2);
  const auto b = random_values(d.out_channels, 3);
  std::vector<float> y(d.length * d.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::conv1d_forward<float>(d, x, w, b, y);
    else
      k::serial::conv1d_forward<float>(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * std::int64_t(d.length * d.out_channels * d.width * d.in_channels));
}

template <bool Parallel>
void BM_Conv1dBackward(benchmark::State& state) {
  const auto d = conv_dims(state);
  const auto x = random_values(d.length * d.in_channels, 1);
  const auto w = random_values(d.out_channels * d.width * d.in_channels, 2);
  const auto dy = random_values(d.length * d.out_channels, 4);
  std::vector<float> dx(x.size()), dw(w.size()), db(d.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::parallel::conv1d_backward_input<float>(d, w, dy, dx);
      k::parallel::conv1d_backward_params<float>(d, x, dy, dw, db);
    } else {
      k::serial::conv1d_backward_input<float>(d, w, dy, dx);
      k::serial::conv1d_backward_params<float>(d, x, dy, dw, db);
    }
    benchmark::DoNotOptimize(dx.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

template <bool Parallel>
void BM_Affine(benchmark::State& state) {
  const k::AffineDims d{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)), 20};
  const auto x = random_values(d.rows * d.in_features, 1);
  const auto w = random_values(d.out_features * d.in_features, 2);
  const auto b = random_values(d.out_features, 3);
  std::vector<float> y(d.rows * d.out_features);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::affine_forward<float>(d, x, w, b, y);
    else
      k::serial::affine_forward<float>(d, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Conv1dForward<false>)->Name("conv1d_forward/serial")->Args({200, 32})->Args({750, 256});
BENCHMARK(BM_Conv1dForward<true>)->Name("conv1d_forward/parallel")->Args({200, 32})->Args({750, 256});
BENCHMARK(BM_Conv1dBackward<false>)->Name("conv1d_backward/serial")->Args({200, 32})->Args({750, 256});
BENCHMARK(BM_Conv1dBackward<true>)->Name("conv1d_backward/parallel")->Args({200, 32})->Args({750, 256});
BENCHMARK(BM_Affine<false>)->Name("affine_forward/serial")->Args({200, 32})->Args({750, 256});
BENCHMARK(BM_Affine<true>)->Name("affine_forward/parallel")->Args({200, 32})->Args({750, 256});

BENCHMARK_MAIN();
