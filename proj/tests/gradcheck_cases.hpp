#pragma once

// Finite-difference checks shared by the unit tests and the acceptance run.
// Each case builds fresh inputs from a seed; op kernels are checked in double,
// losses on float inputs (they accumulate in double internally).

#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fustal/diffnum.hpp"
#include "fustal/generator.hpp"
#include "fustal/ops.hpp"
#include "fustal/student.hpp"

namespace gradcheck {

using fustal::diffnum::BasicTensor;
using fustal::diffnum::GradCheckReport;
using fustal::diffnum::ScalarFn;
using DTensor = BasicTensor<double>;
using FTensor = BasicTensor<float>;

inline constexpr double kTolerance = 1e-3;

struct Case {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

template <class Real>
BasicTensor<Real> uniform(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi) {
  BasicTensor<Real> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(u(rng));
  return t;
}

// Values whose sorted neighbours differ by at least `gap`, so a finite
// difference step never reorders a top-k selection.
template <class Real>
BasicTensor<Real> separated(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo, double hi,
                            double gap) {
  for (;;) {
    auto t = uniform<Real>(shape, rng, lo, hi);
    std::vector<double> v(t.data().begin(), t.data().end());
    std::sort(v.begin(), v.end());
    bool ok = true;
    for (std::size_t i = 1; i < v.size() && ok; ++i) ok = v[i] - v[i - 1] >= gap;
    if (ok) return t;
  }
}

inline fustal::MultiHot random_label(std::size_t C, std::mt19937_64& rng) {
  fustal::MultiHot y(C, 0);
  for (auto& b : y) b = rng() % 3 == 0;
  y[rng() % C] = 1;
  return y;
}

// Projects an op's output onto fixed random weights: value = sum_i w_i y_i.
template <class Fwd, class Bwd>
ScalarFn<double> projected(Fwd fwd, Bwd bwd, std::uint64_t seed) {
  return [=](std::vector<DTensor>& in, bool accumulate) {
    auto y = fwd(in);
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    std::uniform_real_distribution<double> u(-1, 1);
    double value = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double w = u(rng);
      value += w * y[i];
      y.grad()[i] = w;
    }
    if (accumulate) bwd(in, y);
    return value;
  };
}

inline std::vector<Case> cases() {
  namespace dn = fustal::diffnum;
  using fustal::diffnum::grad_check;
  std::vector<Case> out;

  out.push_back({"affine", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto fn = projected([](auto& in) { return dn::affine(in[0], in[1], in[2]); },
                                       [](auto& in, auto& y) { dn::affine_backward(in[0], in[1], in[2], y); }, s);
                   return grad_check<double>(fn, {uniform<double>({4, 3}, rng, -1, 1), uniform<double>({2, 3}, rng, -1, 1),
                                                  uniform<double>({2}, rng, -1, 1)},
                                             kTolerance);
                 }});
  out.push_back({"conv1d", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto fn = projected([](auto& in) { return dn::conv1d(in[0], in[1], in[2]); },
                                       [](auto& in, auto& y) { dn::conv1d_backward(in[0], in[1], in[2], y); }, s);
                   return grad_check<double>(fn, {uniform<double>({6, 3}, rng, -1, 1),
                                                  uniform<double>({4, 3, 3}, rng, -1, 1), uniform<double>({4}, rng, -1, 1)},
                                             kTolerance);
                 }});
  out.push_back({"relu", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto x = uniform<double>({5, 4}, rng, -1, 1);
                   for (std::size_t i = 0; i < x.size(); ++i)
                     if (std::abs(x[i]) < 0.1) x[i] = x[i] < 0 ? -0.5 : 0.5;
                   auto fn = projected([](auto& in) { return dn::relu(in[0]); },
                                       [](auto& in, auto& y) { dn::relu_backward(in[0], y); }, s);
                   return grad_check<double>(fn, {x}, kTolerance);
                 }});
  out.push_back({"sigmoid", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto fn = projected([](auto& in) { return dn::sigmoid(in[0]); },
                                       [](auto& in, auto& y) { dn::sigmoid_backward(in[0], y); }, s);
                   return grad_check<double>(fn, {uniform<double>({5, 4}, rng, -4, 4)}, kTolerance);
                 }});
  out.push_back({"softplus", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto fn = projected([](auto& in) { return dn::softplus(in[0]); },
                                       [](auto& in, auto& y) { dn::softplus_backward(in[0], y); }, s);
                   return grad_check<double>(fn, {uniform<double>({5, 4}, rng, -4, 4)}, kTolerance);
                 }});
  out.push_back({"softmax", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   const std::size_t axis = s % 2;
                   auto fn = projected([axis](auto& in) { return dn::softmax(in[0], axis); },
                                       [axis](auto& in, auto& y) { dn::softmax_backward(in[0], y, axis); }, s);
                   return grad_check<double>(fn, {uniform<double>({4, 5}, rng, -3, 3)}, kTolerance);
                 }});
  out.push_back({"sum_mean", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto fn = projected(
                       [](auto& in) {
                         auto a = dn::sum(in[0]);
                         auto b = dn::mean(in[0]);
                         return DTensor({2}, std::vector<double>{a[0], b[0]});
                       },
                       [](auto& in, auto& y) {
                         DTensor a({1}), b({1});
                         a.grad()[0] = y.grad()[0];
                         b.grad()[0] = y.grad()[1];
                         dn::sum_backward(in[0], a);
                         dn::mean_backward(in[0], b);
                       },
                       s);
                   return grad_check<double>(fn, {uniform<double>({3, 4}, rng, -1, 1)}, kTolerance);
                 }});
  out.push_back({"topk_mean", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   const std::size_t axis = s % 2;
                   auto fn = projected([axis](auto& in) { return dn::topk_mean(in[0], 3, axis); },
                                       [axis](auto& in, auto& y) { dn::topk_mean_backward(in[0], y, 3, axis); }, s);
                   return grad_check<double>(fn, {separated<double>({8, 5}, rng, -2, 2, 0.01)}, kTolerance);
                 }});
  out.push_back({"l2_normalize_rows", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   auto fn = projected([](auto& in) { return dn::l2_normalize_rows(in[0]); },
                                       [](auto& in, auto& y) { dn::l2_normalize_rows_backward(in[0], y); }, s);
                   return grad_check<double>(fn, {uniform<double>({4, 5}, rng, -1, 1)}, kTolerance);
                 }});

  out.push_back({"mil_ce", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   const auto label = random_label(4, rng);
                   ScalarFn<float> fn = [label](std::vector<FTensor>& in, bool acc) {
                     return fustal::generator::mil_loss(in[0], label, 3, acc ? 1.0 : 0.0);
                   };
                   return grad_check<float>(fn, {separated<float>({10, 4}, rng, -3, 3, 0.01)}, kTolerance);
                 }});
  out.push_back({"infonce", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   const std::vector<std::size_t> pos{1, 2, 3}, neg{4, 5, 6, 7};
                   const bool cross = s % 2 == 1;
                   auto rows = dn::l2_normalize_rows(uniform<float>({8, 5}, rng, -1, 1));
                   auto other = dn::l2_normalize_rows(uniform<float>({8, 5}, rng, -1, 1));
                   ScalarFn<float> fn = [=](std::vector<FTensor>& in, bool acc) {
                     FTensor& anchors = cross ? in[1] : in[0];
                     return fustal::generator::infonce(in[0], 0, anchors, pos, neg, 0.07, acc ? 1.0 : 0.0);
                   };
                   return grad_check<float>(fn, {rows, other}, kTolerance);
                 }});
  out.push_back({"focal", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   fustal::student::SnippetTargets tg;
                   for (std::size_t t = 0; t < 6; ++t) {
                     tg.class_id.push_back(rng() % 2 ? int(rng() % 3) : fustal::student::kBackground);
                     tg.left.push_back(0);
                     tg.right.push_back(0);
                   }
                   ScalarFn<float> fn = [tg](std::vector<FTensor>& in, bool acc) {
                     return fustal::student::focal_loss(in[0], tg, 0.25, 2.0, acc ? 1.0 : 0.0);
                   };
                   return grad_check<float>(fn, {uniform<float>({6, 3}, rng, -4, 4)}, kTolerance);
                 }});
  out.push_back({"diou", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   std::uniform_real_distribution<double> u(0.5, 8.0);
                   fustal::student::SnippetTargets tg;
                   FTensor offsets({6, 2});
                   for (std::size_t t = 0; t < 6; ++t) {
                     tg.class_id.push_back(t % 3 == 2 ? fustal::student::kBackground : 0);
                     tg.left.push_back(u(rng));
                     tg.right.push_back(u(rng));
                     // Keep predicted boundaries away from the target ones, where DIoU has kinks.
                     for (int side = 0; side < 2; ++side) {
                       const double target = side ? tg.right.back() : tg.left.back();
                       double v;
                       do v = u(rng);
                       while (std::abs(v - target) < 0.05);
                       offsets.at(t, std::size_t(side)) = float(v);
                     }
                   }
                   ScalarFn<float> fn = [tg](std::vector<FTensor>& in, bool acc) {
                     return fustal::student::diou_regression_loss(in[0], tg, acc ? 1.0 : 0.0);
                   };
                   return grad_check<float>(fn, {offsets}, kTolerance);
                 }});
  out.push_back({"student_mil", [](std::uint64_t s) {
                   std::mt19937_64 rng(s);
                   const auto label = random_label(3, rng);
                   ScalarFn<float> fn = [label](std::vector<FTensor>& in, bool acc) {
                     return fustal::student::student_mil_loss(in[0], label, 3, acc ? 1.0 : 0.0);
                   };
                   return grad_check<float>(fn, {separated<float>({10, 3}, rng, -3, 3, 0.01)}, kTolerance);
                 }});
  return out;
}

}  // namespace gradcheck
