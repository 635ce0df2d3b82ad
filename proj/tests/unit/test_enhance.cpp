// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "mudet/enhance.hpp"
#include "mudet/error.hpp"

using namespace mudet;

namespace {

Tensor random_image(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

// Per-pixel reading of the band rule: lower band owns i0, pass band owns i1.
double slice_oracle(double v, const SliceConfig& c) {
  if (v <= c.i0) return c.h1;
  if (v <= c.i1) return v;
  return c.h2;
}

}  // namespace

TEST_SUITE("uni-enh") {

TEST_CASE("gamma transform examples") {
  Tensor img = Tensor::from({1, 1, 3}, {0.0, 0.5, 1.0});
  Tensor id = gamma_transform(img, {1.0, 1.0});
  CHECK(id[0] == 0.0);
  CHECK(id[1] == 0.5);
  CHECK(id[2] == 1.0);
  CHECK(gamma_transform(img, {1.0, 2.0})[1] == 0.25);
  CHECK(gamma_transform(img, {3.0, 0.7})[0] == 0.0);
  CHECK(gamma_transform(img, {3.0, 0.7})[2] == 1.0);  // clamped
}

TEST_CASE("gamma transform matches a scalar oracle and is monotone") {
  std::mt19937_64 rng(1);
  for (GammaConfig c : {GammaConfig{1.0, 0.5}, GammaConfig{1.0, 1.5}, GammaConfig{1.7, 2.2},
                        GammaConfig{0.4, 0.3}}) {
    Tensor img = random_image(rng, {3, 9, 11}, 0.0, 1.0);
    Tensor out = gamma_transform(img, c);
    for (std::size_t i = 0; i < img.numel(); ++i) {
      CHECK(out[i] == std::clamp(std::pow(c.A * img[i], c.gamma), 0.0, 1.0));
    }
    std::vector<double> sorted(img.data().begin(), img.data().end());
    std::sort(sorted.begin(), sorted.end());
    Tensor s = gamma_transform(Tensor::from({1, 1, sorted.size()}, sorted), c);
    for (std::size_t i = 1; i < sorted.size(); ++i) CHECK(s[i] >= s[i - 1]);
  }
}

TEST_CASE("gamma transform rejects out-of-range input with its index") {
  Tensor img = Tensor::from({1, 1, 3}, {0.2, 1.5, 0.1});
  try {
    gamma_transform(img, {});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
  CHECK_THROWS_AS(gamma_transform(Tensor::zeros({1, 1, 1}), {0.0, 1.0}), ValidationError);
}

TEST_CASE("grayscale slice examples") {
  SliceConfig c{0, 0, 10, 100, 0, 255};
  Tensor out = grayscale_slice(Tensor::from({1, 1, 5}, {5, 50, 150, 10, 100}), c);
  CHECK(out[0] == 0);
  CHECK(out[1] == 50);
  CHECK(out[2] == 0);
  CHECK(out[3] == 0);    // i0 belongs to the lower band
  CHECK(out[4] == 100);  // i1 belongs to the pass band

  SliceConfig all{7, 9, 0, 255, 0, 255};
  std::mt19937_64 rng(2);
  Tensor img = random_image(rng, {1, 6, 6}, 0.001, 255.0);
  Tensor same = grayscale_slice(img, all);
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(same[i] == img[i]);

  CHECK_THROWS_AS(grayscale_slice(Tensor::from({1, 1, 1}, {300}), c), ValidationError);
  CHECK_THROWS_AS((SliceConfig{0, 0, 50, 10, 0, 255}.validate()), ValidationError);
}

TEST_CASE("grayscale slice matches the per-pixel oracle, keeps pass-band pixels, is idempotent") {
  std::mt19937_64 rng(3);
  const std::vector<SliceConfig> cfgs{{0, 0, 0.5, 6.0, 0, 655.35},
                                      {0.1, 8.0, 0.5, 6.0, 0, 655.35},
                                      {1, 200, 20, 120, 0, 255}};
  for (const auto& c : cfgs) {
    Tensor img = random_image(rng, {1, 16, 16}, c.c_min, std::min(c.c_max, 2.0 * c.i1));
    Tensor out = grayscale_slice(img, c);
    std::size_t pass_in = 0, pass_out = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
      CHECK(out[i] == slice_oracle(img[i], c));
      pass_in += img[i] > c.i0 && img[i] <= c.i1;
      pass_out += out[i] > c.i0 && out[i] <= c.i1;
      CHECK((out[i] == c.h1 || out[i] == c.h2 || (out[i] > c.i0 && out[i] <= c.i1)));
    }
    CHECK(pass_in == pass_out);
    Tensor twice = grayscale_slice(out, c);
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(twice[i] == out[i]);
  }
}

TEST_CASE("enhance_rgb appends one gamma luminance channel per coefficient") {
  std::mt19937_64 rng(4);
  Tensor rgb = random_image(rng, {3, 4, 4}, 0.0, 1.0);
  UniEnhConfig cfg;
  Tensor out = enhance_rgb(rgb, cfg);
  CHECK(out.shape() == Shape{5, 4, 4});
  for (std::size_t i = 0; i < 48; ++i) CHECK(out[i] == rgb[i]);
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t i = 0; i < 16; ++i) {
      const double y = 0.299 * rgb[i] + 0.587 * rgb[16 + i] + 0.114 * rgb[32 + i];
      const double want = std::pow(cfg.A * std::clamp(y, 0.0, 1.0), cfg.gamma_coeffs[k]);
      CHECK(std::abs(out[(3 + k) * 16 + i] - want) < 1e-15);
    }
  }
}

}  // TEST_SUITE
