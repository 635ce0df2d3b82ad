// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "mudet/checkpoint.hpp"
#include "mudet/error.hpp"
#include "mudet/nn.hpp"
#include "mudet/tensor.hpp"
#include "oracles.hpp"

using namespace mudet;

namespace {

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("conv block with identity 1x1 kernel and no BN is the identity") {
  std::mt19937_64 rng(3);
  Tensor x = Tensor::from({3, 4, 5}, uniform(60, rng));
  ConvBlockParams p = ConvBlockParams::zeros(3, 3, 1, 1, false, 1.0);
  auto w = p.weight.mutable_data();
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  CHECK(values(conv_block_forward(x, p)) == values(x));
}

TEST_CASE("batch norm with unit statistics and eps 0 passes values through") {
  std::mt19937_64 rng(4);
  Tensor x = Tensor::from({2, 3, 3}, uniform(18, rng));
  ConvBlockParams p = ConvBlockParams::zeros(2, 2, 1, 1, true, 1.0);
  p.weight.mutable_data()[0] = 1.0;
  p.weight.mutable_data()[3] = 1.0;
  p.bn.eps = 0.0;
  CHECK(values(conv_block_forward(x, p, false)) == values(x));
}

TEST_CASE("zero input gives zero output") {
  std::mt19937_64 rng(5);
  ConvBlockParams p = ConvBlockParams::init(2, 4, 3, 1, rng);
  Tensor y = conv_block_forward(Tensor::zeros({2, 6, 6}), p);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d matches a nested-loop oracle") {
  std::mt19937_64 rng(11);
  for (std::size_t stride : {1u, 2u}) {
    const auto xv = uniform(4 * 8 * 8, rng);
    const auto wv = uniform(5 * 4 * 3 * 3, rng);
    const auto bv = uniform(5, rng);
    Tensor y = conv2d(Tensor::from({4, 8, 8}, xv), Tensor::from({5, 4, 3, 3}, wv),
                      Tensor::from({5}, bv), stride, 1);
    const auto ref = oracle::conv2d(xv, 4, 8, 8, wv, 5, 3, bv, stride, 1);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("conv block is leaky relu of the oracle convolution") {
  std::mt19937_64 rng(12);
  ConvBlockParams p = ConvBlockParams::init(4, 3, 3, 1, rng, false, 0.1);
  const auto xv = uniform(4 * 8 * 8, rng);
  Tensor y = conv_block_forward(Tensor::from({4, 8, 8}, xv), p);
  const auto ref = oracle::conv2d(xv, 4, 8, 8, values(p.weight), 3, 3, values(p.bias), 1, 1);
  CHECK(y.shape() == Shape{3, 8, 8});
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double want = ref[i] > 0 ? ref[i] : 0.1 * ref[i];
    CHECK(std::abs(y[i] - want) < 1e-10);
  }
}

TEST_CASE("conv shape mismatch names both shapes") {
  std::mt19937_64 rng(1);
  ConvBlockParams p = ConvBlockParams::init(3, 2, 3, 1, rng);
  try {
    conv_block_forward(Tensor::zeros({4, 5, 5}), p);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(4, 5, 5)") != std::string::npos);
    CHECK(msg.find("(2, 3, 3, 3)") != std::string::npos);
  }
}

TEST_CASE("matmul") {
  Tensor two = Tensor::from({1, 1}, {2});
  CHECK(matmul(two, Tensor::from({1, 1}, {3})).item() == 6.0);
  std::mt19937_64 rng(21);
  const auto a = uniform(12, rng), b = uniform(8, rng);
  Tensor c = matmul(Tensor::from({3, 4}, a), Tensor::from({4, 2}, b));
  const auto ref = oracle::matmul(a, b, 3, 4, 2);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c[i] - ref[i]) < 1e-12);
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(values(matmul(eye, Tensor::from({3, 4}, a))) == a);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("softmax and sigmoid") {
  CHECK(softmax_rows(Tensor::from({1, 1}, {7.5})).item() == 1.0);
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  Tensor s = softmax_rows(Tensor::from({1, 2}, {0.0, std::log(3.0)}));
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-15));

  std::mt19937_64 rng(8);
  auto v = uniform(6 * 7, rng, -30, 30);
  Tensor a = softmax_rows(Tensor::from({6, 7}, v));
  for (double& x : v) x += 5.0;
  Tensor b = softmax_rows(Tensor::from({6, 7}, v));
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      sum += a[r * 7 + c];
      CHECK(std::abs(a[r * 7 + c] - b[r * 7 + c]) < 1e-12);
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  Tensor big = sigmoid(Tensor::from({2}, {800.0, -800.0}));
  CHECK(std::isfinite(big[0]));
  CHECK(big[1] >= 0.0);
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 2.0);

  Tensor z = Tensor::scalar(0.0, true);
  sigmoid(z).backward();
  CHECK(z.grad()[0] == 0.25);

  CHECK_THROWS_AS(x.backward(), ShapeError);
}

TEST_CASE("min and max send ties to the first operand") {
  Tensor a = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor b = Tensor::from({2}, {1.0, 3.0}, true);
  sum(minimum(a, b) + maximum(a, b)).backward();
  CHECK(a.grad()[0] == 2.0);
  CHECK(b.grad()[0] == 0.0);
  CHECK(a.grad()[1] == 1.0);
  CHECK(b.grad()[1] == 1.0);
}

TEST_CASE("finite differences") {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  CHECK(finite_diff_check([](const Tensor& t) { return sum(t * t); }, x, 1e-4) < 1e-7);

  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = Tensor::from({5}, uniform(5, rng), true);
    Tensor b = Tensor::from({5}, uniform(5, rng, 0.5, 2.0), true);
    auto f = [&] {
      Tensor m = matmul(reshape(sigmoid(a), {5, 1}), reshape(log(b), {1, 5}));
      return sum(matmul(softmax_rows(m), reshape(pow(b, 2.0), {5, 1}))) + sum(leaky_relu(a, 0.1) * exp(b * 0.1));
    };
    CHECK(finite_diff_check(f, {a, b}, 1e-4) < 1e-4);
  }
}

TEST_CASE("finite differences skip coordinates that straddle a kink") {
  Tensor x = Tensor::from({3}, {0.5, 3e-5, -0.7}, true);
  FiniteDiffReport r = finite_diff_report([&] { return sum(leaky_relu(x, 0.1)); }, {x}, 1e-4);
  CHECK(r.checked == 2);
  CHECK(r.skipped == 1);
  CHECK(r.max_error < 1e-10);
  CHECK_FALSE(BranchTrace::active());
}

TEST_CASE("forward is bitwise deterministic") {
  std::mt19937_64 r1(9), r2(9);
  ConvBlockParams p1 = ConvBlockParams::init(3, 8, 3, 2, r1);
  ConvBlockParams p2 = ConvBlockParams::init(3, 8, 3, 2, r2);
  std::mt19937_64 rng(10);
  Tensor x = Tensor::from({3, 16, 16}, uniform(768, rng));
  CHECK(values(conv_block_forward(x, p1, true)) == values(conv_block_forward(x, p2, true)));
}

TEST_CASE("3x3 stride-1 keeps the spatial extent") {
  std::mt19937_64 rng(2);
  ConvBlockParams p = ConvBlockParams::init(2, 3, 3, 1, rng);
  CHECK(conv_block_forward(Tensor::zeros({2, 7, 9}), p).shape() == Shape{3, 7, 9});
}

TEST_CASE("checkpoint round trip and corruption") {
  std::vector<NamedTensor> ts{{"a", Tensor::from({2, 2}, {1, -2, 3.5, 1e-300})},
                              {"b.weight", Tensor::from({3}, {0, 0, 7})}};
  const std::string bytes = encode_checkpoint(ts);
  CHECK(bytes.substr(0, 4) == "MUDT");
  auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  CHECK(back[1].name == "b.weight");
  CHECK(values(back[0].tensor) == values(ts[0].tensor));
  CHECK(back[0].tensor.shape() == Shape{2, 2});
  CHECK_THROWS_AS(decode_checkpoint("XXXX" + bytes.substr(4)), ParseError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);

  std::vector<NamedTensor> target{{"b.weight", Tensor::zeros({3}, true)}};
  assign_checkpoint(back, target);
  CHECK(target[0].tensor[2] == 7.0);
  std::vector<NamedTensor> wrong{{"b.weight", Tensor::zeros({4}, true)}};
  CHECK_THROWS_AS(assign_checkpoint(back, wrong), ShapeError);
}

}  // TEST_SUITE
