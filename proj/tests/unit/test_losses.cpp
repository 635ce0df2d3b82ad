// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "mudet/losses.hpp"

using namespace mudet;

namespace {

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor random_boxes(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  return concat_channels({random_tensor(rng, {4, rows, cols}, 1, 9),
                          random_tensor(rng, {4, rows, cols}, 0, 1),
                          random_tensor(rng, {1, rows, cols}, 0.3, 1)});
}

MaskTriple random_masks(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_int_distribution<int> pick(0, 3);
  MaskTriple m;
  m.rows = rows;
  m.cols = cols;
  m.easy.assign(m.size(), 0);
  m.rgb_only.assign(m.size(), 0);
  m.h_only.assign(m.size(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    switch (pick(rng)) {
      case 1: m.easy[i] = 1; break;
      case 2: m.rgb_only[i] = 1; break;
      case 3: m.h_only[i] = 1; break;
      default: break;
    }
  }
  return m;
}

// Scalar loop: sum_i w_i (reg_i + cls_i) / #{w_i > 0 and positive}.
double loop_loss(const HeadPrediction& pred, const TargetAssignment& t, const std::vector<int>& w,
                 double gamma) {
  double total = 0.0, n = 0.0;
  for (std::size_t r = 0; r < t.rows; ++r) {
    for (std::size_t c = 0; c < t.cols; ++c) {
      const std::size_t i = r * t.cols + c;
      if (w[i] == 0) continue;
      double cls = 0.0;
      for (std::size_t k = 0; k < t.num_classes; ++k) {
        const std::size_t at = k * t.rows * t.cols + i;
        cls += focal_loss(pred.cls_prob[at], static_cast<int>(t.class_targets[at]), gamma);
      }
      double reg = 0.0;
      if (t.objectness[i]) {
        reg = obb_regression_loss(encoding_at(t.box_targets, r, c), encoding_at(pred.box, r, c));
        n += 1.0;
      }
      total += w[i] * (reg + cls);
    }
  }
  return n == 0.0 ? 0.0 : total / n;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("focal loss examples") {
  CHECK(focal_loss(1.0 - 1e-9, 1, 2.0) < 1e-12);
  CHECK(focal_loss(0.5, 1, 2.0) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-15));
  CHECK(focal_loss(0.5, 1, 2.0) == doctest::Approx(0.173287).epsilon(1e-6));
  for (double p : {0.1, 0.4, 0.8}) {
    CHECK(focal_loss(p, 1, 0.0) == doctest::Approx(-std::log(p)).epsilon(1e-15));
    CHECK(focal_loss(p, 0, 0.0) == doctest::Approx(-std::log(1 - p)).epsilon(1e-15));
  }
  CHECK(std::isfinite(focal_loss(0.0, 1, 2.0)));
  double prev = 1e300;
  for (double pt = 0.01; pt < 1.0; pt += 0.01) {
    const double l = focal_loss(pt, 1, 2.0);
    CHECK(l >= 0.0);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("tensor focal loss matches the scalar form") {
  std::mt19937_64 rng(1);
  Tensor p = random_tensor(rng, {2, 3, 3}, 0.01, 0.99);
  std::vector<double> labels(18);
  for (std::size_t i = 0; i < 18; ++i) labels[i] = i % 3 == 0;
  Tensor l = focal_loss(p, Tensor::from({2, 3, 3}, labels), 2.0);
  for (std::size_t i = 0; i < 18; ++i) {
    CHECK(l[i] == doctest::Approx(focal_loss(p[i], static_cast<int>(labels[i]), 2.0)).epsilon(1e-14));
  }
}

TEST_CASE("regression loss examples") {
  BoxEncoding gt{{1, 1, 1, 1}, {0.2, 0.3, 0.4, 0.5}, 0.7};
  CHECK(obb_regression_loss(gt, gt) == 0.0);
  BoxEncoding big = gt;
  big.l = {2, 2, 2, 2};
  CHECK(obb_regression_loss(gt, big) == doctest::Approx(0.75).epsilon(1e-15));
  BoxEncoding shifted = gt;
  shifted.s[2] += 0.1;
  CHECK(obb_regression_loss(gt, shifted) == doctest::Approx(0.01).epsilon(1e-12));

  std::mt19937_64 rng(2);
  Tensor g = random_boxes(rng, 2, 3), p = random_boxes(rng, 2, 3);
  Tensor map = obb_regression_loss_map(g, p);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double want = obb_regression_loss(encoding_at(g, r, c), encoding_at(p, r, c));
      CHECK(want >= 0.0);
      CHECK(map[r * 3 + c] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("target assignment") {
  TargetAssignment t = assign_targets({{0, 9.0, 5.0, 6.0, 3.0, 20.0}}, 4, 4, 4, 1);
  CHECK(t.positives() == 1);
  CHECK(t.objectness[1 * 4 + 2] == 1);
  CHECK(t.sampling_point(1, 2).x == 10.0);
  CHECK(t.sampling_point(1, 2).y == 6.0);
  BoxEncoding want = encode_obb({0, 9.0, 5.0, 6.0, 3.0, 20.0}, {10.0, 6.0});
  BoxEncoding got = encoding_at(t.box_targets, 1, 2);
  for (int k = 0; k < 4; ++k) CHECK(got.l[k] == doctest::Approx(want.l[k]));
  CHECK(got.r == doctest::Approx(want.r));
  CHECK(t.class_targets[1 * 4 + 2] == 1.0);
  CHECK(t.box_targets[0] == 0.0);
}

TEST_CASE("easy, hard and total losses") {
  std::mt19937_64 rng(3);
  const std::size_t rows = 4, cols = 5;
  std::vector<ObbAnnotation> gts{{0, 6, 6, 7, 3, 10}, {0, 14, 10, 6, 4, -30}, {0, 2, 14, 5, 3, 80}};
  TargetAssignment t = assign_targets(gts, rows, cols, 4, 1);
  REQUIRE(t.positives() == 3);
  HeadPrediction pred{random_tensor(rng, {1, rows, cols}, 0.05, 0.95), random_boxes(rng, rows, cols)};
  LossConfig cfg;
  LocationLosses terms = location_losses(pred, t, cfg);

  MaskTriple none = MaskTriple::all_easy(rows, cols);
  std::fill(none.easy.begin(), none.easy.end(), 0);
  CHECK(easy_loss(terms, t, none).item() == 0.0);
  CHECK(hard_loss(terms, t, MaskTriple::all_easy(rows, cols)).item() == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    MaskTriple m = random_masks(rng, rows, cols);
    std::vector<int> we(m.size()), wh(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
      we[i] = m.easy[i];
      wh[i] = m.rgb_only[i] + m.h_only[i];
    }
    const double e = easy_loss(terms, t, m).item(), h = hard_loss(terms, t, m).item();
    CHECK(e == doctest::Approx(loop_loss(pred, t, we, 2.0)).epsilon(1e-12));
    CHECK(h == doctest::Approx(loop_loss(pred, t, wh, 2.0)).epsilon(1e-12));
    CHECK(total_loss(terms, t, m).item() == doctest::Approx(e + h).epsilon(1e-15));

    MaskTriple no_hard = m;
    std::fill(no_hard.rgb_only.begin(), no_hard.rgb_only.end(), 0);
    std::fill(no_hard.h_only.begin(), no_hard.h_only.end(), 0);
    CHECK(total_loss(terms, t, no_hard).item() == easy_loss(terms, t, no_hard).item());
  }
}

TEST_CASE("mean of two known easy locations") {
  TargetAssignment t = assign_targets({{0, 2, 2, 3, 2, 0}, {0, 6, 2, 3, 2, 0}}, 1, 2, 4, 1);
  REQUIRE(t.positives() == 2);
  Tensor box = concat_channels({t.box_targets.detach()});
  HeadPrediction pred{Tensor::from({1, 1, 2}, {0.5, 0.8}), box};
  LocationLosses terms = location_losses(pred, t, {});
  const double a = focal_loss(0.5, 1, 2.0), b = focal_loss(0.8, 1, 2.0);
  CHECK(easy_loss(terms, t, MaskTriple::all_easy(1, 2)).item() == doctest::Approx((a + b) / 2));
  MaskTriple one_hard = MaskTriple::all_easy(1, 2);
  one_hard.easy[0] = 0;
  one_hard.rgb_only[0] = 1;
  CHECK(hard_loss(terms, t, one_hard).item() == doctest::Approx(a));
}

}  // TEST_SUITE
