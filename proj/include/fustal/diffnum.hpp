#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fustal/ops.hpp"
#include "fustal/tensor.hpp"

namespace fustal::diffnum {

// Ordered, named collection of trainable tensors.
class ModelParams {
 public:
  Tensor& add(std::string name, std::vector<std::size_t> shape);
  Tensor& add(std::string name, Tensor tensor);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t num_values() const noexcept;

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  void zero_grad();

  // Same names and shapes, in the same order.
  bool same_layout(const ModelParams& other) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng);

struct AdamState {
  float learning_rate = 1e-4f;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;

  AdamState() = default;
  AdamState(const ModelParams& params, float lr);
};

// Bias-corrected Adam update; zeroes every gradient afterwards. Throws
// TrainingError naming the parameter if a gradient is non-finite.
void adam_step(ModelParams& params, AdamState& state);

// --- finite-difference checking ---------------------------------------------

template <class Real>
using ScalarFn = std::function<double(std::vector<BasicTensor<Real>>& inputs, bool accumulate_grad)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = true;
};

// Compares the analytic gradient the function accumulates into its inputs
// against central differences. `fn(inputs, true)` must return the value and
// add d(value)/d(input) into each input's grad; `fn(inputs, false)` only
// returns the value. Relative error per coordinate is
// |a - n| / max(1e-6, |a| + |n|).
template <class Real>
GradCheckReport grad_check(const ScalarFn<Real>& fn, std::vector<BasicTensor<Real>> inputs,
                           double tolerance, double step = 1e-3) {
  for (auto& t : inputs) t.zero_grad();
  fn(inputs, true);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckReport report;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    auto& t = inputs[n];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const Real original = t[i];
      t[i] = static_cast<Real>(double(original) + step);
      const double hi_x = double(t[i]);
      const double hi = fn(inputs, false);
      t[i] = static_cast<Real>(double(original) - step);
      const double lo_x = double(t[i]);
      const double lo = fn(inputs, false);
      t[i] = original;
      const double numeric = (hi - lo) / (hi_x - lo_x);
      const double a = analytic[n][i];
      const double err = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.coordinates;
    }
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

// --- checkpoints ---------------------------------------------------------------
//
// One line of JSON (format tag, metadata, tensor names/shapes) terminated by
// '\n', followed by the raw little-endian float32 payload in header order.

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  ModelParams params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes/reads float32 little-endian regardless of host order.
void write_f32_le(std::ostream& os, std::span<const float> values);
void read_f32_le(std::istream& is, std::span<float> values);

}  // namespace fustal::diffnum
