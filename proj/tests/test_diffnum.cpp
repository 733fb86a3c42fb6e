#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "fustal/diffnum.hpp"
#include "fustal/errors.hpp"
#include "fustal/ops.hpp"
#include "gradcheck_cases.hpp"
#include "helpers.hpp"

using namespace fustal;
using namespace fustal::diffnum;

TEST_CASE("forward examples") {
  const Tensor x({3}, std::vector<float>{-1, 0, 2});
  const auto r = relu(x);
  CHECK(r[0] == 0.0f);
  CHECK(r[1] == 0.0f);
  CHECK(r[2] == 2.0f);

  const auto s = softmax(Tensor({2}, std::vector<float>{0, 0}), 0);
  CHECK(s[0] == 0.5f);
  CHECK(s[1] == 0.5f);

  const auto t = topk_mean(Tensor({4}, std::vector<float>{3, 1, 2, 0}), 2, 0);
  REQUIRE(t.size() == 1);
  CHECK(t[0] == 2.5f);

  CHECK(sigmoid_scalar(0.0) == 0.5);
  CHECK(softplus_scalar(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(std::isfinite(softplus_scalar(1000.0)));
  CHECK(sigmoid_scalar(-1000.0) >= 0.0);
}

TEST_CASE("softmax rows sum to one along the chosen axis") {
  std::mt19937_64 rng(2);
  const auto x = testing::random_tensor<double>({3, 4}, rng, -5, 5);
  const auto s1 = softmax(x, 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double acc = 0;
    for (std::size_t c = 0; c < 4; ++c) acc += s1.at(r, c);
    CHECK(acc == doctest::Approx(1.0));
  }
  const auto s0 = softmax(x, 0);
  for (std::size_t c = 0; c < 4; ++c) {
    double acc = 0;
    for (std::size_t r = 0; r < 3; ++r) acc += s0.at(r, c);
    CHECK(acc == doctest::Approx(1.0));
  }
}

TEST_CASE("topk_mean along each axis of a matrix") {
  const Tensor x({2, 3}, std::vector<float>{1, 5, 3, 4, 2, 6});
  const auto rows = topk_mean(x, 2, 1);
  CHECK(rows[0] == 4.0f);
  CHECK(rows[1] == 5.0f);
  const auto cols = topk_mean(x, 1, 0);
  CHECK(cols[0] == 4.0f);
  CHECK(cols[1] == 5.0f);
  CHECK(cols[2] == 6.0f);
  CHECK_THROWS_AS(topk_mean(x, 4, 1), ContractError);
  CHECK_THROWS_AS(topk_mean(x, 0, 1), ContractError);
}

TEST_CASE("shape mismatches name both shapes") {
  const Tensor x({4, 3}), w({2, 5}), b({2});
  try {
    affine(x, w, b);
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("4x3") != std::string::npos);
    CHECK(msg.find("2x5") != std::string::npos);
  }
  CHECK_THROWS_AS(conv1d(Tensor({5, 3}), Tensor({2, 3, 4}), Tensor({2})), ContractError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ContractError);
}

TEST_CASE("every op and loss passes the finite-difference check") {
  for (const auto& c : gradcheck::cases()) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto r = c.run(seed);
      INFO(c.name << " seed " << seed << " max rel err " << r.max_rel_error);
      CHECK(r.passed);
      CHECK(r.coordinates > 0);
    }
  }
}

TEST_CASE("grad_check on a constant function reports zero error") {
  ScalarFn<double> fn = [](std::vector<BasicTensor<double>>&, bool) { return 3.0; };
  const auto r = grad_check<double>(fn, {BasicTensor<double>({4}, 1.0)}, 1e-3);
  CHECK(r.max_rel_error == 0.0);
  CHECK(r.passed);
}

TEST_CASE("grad_check catches a wrong gradient") {
  ScalarFn<double> fn = [](std::vector<BasicTensor<double>>& in, bool acc) {
    if (acc) in[0].grad()[0] += 1.0;  // true derivative of x^2 at x=3 is 6
    return in[0][0] * in[0][0];
  };
  const auto r = grad_check<double>(fn, {BasicTensor<double>({1}, 3.0)}, 1e-3);
  CHECK_FALSE(r.passed);
}

TEST_CASE("adam first step moves by the learning rate") {
  ModelParams p;
  p.add("w", {1}).fill(1.0f);
  AdamState st(p, 0.1f);
  p.at("w").grad()[0] = 1.0f;
  adam_step(p, st);
  CHECK(p.at("w")[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.at("w").grad()[0] == 0.0f);
  CHECK(st.step == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  ModelParams p;
  p.add("w", {3}).fill(0.25f);
  AdamState st(p, 0.1f);
  for (int i = 0; i < 3; ++i) adam_step(p, st);
  for (float v : p.at("w").data()) CHECK(v == 0.25f);
}

TEST_CASE("identical parameters and gradients give identical updates") {
  std::mt19937_64 rng(9);
  ModelParams a, b;
  init_uniform(a.add("w", {4, 3}), 3, rng);
  b.add("w", a.at("w"));
  AdamState sa(a, 0.01f), sb(b, 0.01f);
  for (int i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 12; ++j) a.at("w").grad()[j] = b.at("w").grad()[j] = float(j) - 5.5f;
    adam_step(a, sa);
    adam_step(b, sb);
  }
  CHECK(std::memcmp(a.at("w").data().data(), b.at("w").data().data(), 12 * 4) == 0);
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
  ModelParams p;
  p.add("classifier.weight", {2});
  AdamState st(p, 0.1f);
  p.at("classifier.weight").grad()[1] = std::nanf("");
  try {
    adam_step(p, st);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("classifier.weight") != std::string::npos);
  }
}

TEST_CASE("model params keep insertion order and reject duplicates") {
  ModelParams p;
  p.add("b", {2});
  p.add("a", {3, 1});
  CHECK(p.size() == 2);
  CHECK(p.num_values() == 5);
  CHECK(p.begin()->first == "b");
  CHECK_THROWS_AS(p.add("a", {1}), ContractError);
  CHECK_THROWS(p.at("missing"));
  ModelParams q;
  q.add("b", {2});
  q.add("a", {3, 1});
  CHECK(p.same_layout(q));
  ModelParams r;
  r.add("a", {3, 1});
  r.add("b", {2});
  CHECK_FALSE(p.same_layout(r));
}

TEST_CASE("init_uniform stays within the fan-in bound") {
  std::mt19937_64 rng(4);
  Tensor t({50, 16});
  init_uniform(t, 16, rng);
  for (float v : t.data()) CHECK(std::abs(v) <= 0.25f);
}

TEST_CASE("checkpoint round trip is exact") {
  testing::TempDir dir("ckpt");
  std::mt19937_64 rng(1);
  Checkpoint ck;
  ck.meta = {{"model", "generator"}, {"seed", 3}};
  init_uniform(ck.params.add("conv.weight", {4, 3, 2}), 6, rng);
  init_uniform(ck.params.add("conv.bias", {4}), 6, rng);
  save_checkpoint(dir / "m.ckpt", ck);
  const auto back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.meta == ck.meta);
  REQUIRE(back.params.same_layout(ck.params));
  for (const auto& [name, t] : ck.params)
    CHECK(std::memcmp(back.params.at(name).data().data(), t.data().data(), t.size() * 4) == 0);
}

TEST_CASE("corrupt checkpoints are rejected") {
  testing::TempDir dir("ckpt_bad");
  Checkpoint ck;
  ck.params.add("w", {8});
  save_checkpoint(dir / "m.ckpt", ck);
  std::ifstream in(dir / "m.ckpt", std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};

  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
  std::ofstream(dir / "long.ckpt", std::ios::binary) << bytes << "zz";
  CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt"), FormatError);
  std::ofstream(dir / "junk.ckpt", std::ios::binary) << "hello\n";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), IoError);
}

TEST_CASE("float32 payload is little endian") {
  std::ostringstream os;
  const float v = 1.0f;
  write_f32_le(os, std::span<const float>(&v, 1));
  const auto s = os.str();
  REQUIRE(s.size() == 4);
  CHECK(static_cast<unsigned char>(s[3]) == 0x3f);
  CHECK(static_cast<unsigned char>(s[2]) == 0x80);
  std::istringstream is(s);
  float back = 0;
  read_f32_le(is, std::span<float>(&back, 1));
  CHECK(back == 1.0f);
}
