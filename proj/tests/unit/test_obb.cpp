// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <random>

#include "mudet/error.hpp"
#include "mudet/obb.hpp"
#include "oracles.hpp"

using namespace mudet;

namespace {

double vertex_error(const ObbAnnotation& a, const ObbAnnotation& b) {
  double worst = 0.0;
  for (const Point& p : obb_vertices(a)) {
    double best = 1e300;
    for (const Point& q : obb_vertices(b)) best = std::min(best, std::hypot(p.x - q.x, p.y - q.y));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace

TEST_SUITE("obb-geom") {

TEST_CASE("distance IoU examples") {
  HbbIou same = hbb_iou_from_distances({1, 1, 1, 1}, {1, 1, 1, 1});
  CHECK(same.iou == 1.0);
  HbbIou r = hbb_iou_from_distances({1, 1, 1, 1}, {2, 2, 2, 2});
  CHECK(r.overlap == 4.0);
  CHECK(r.area == 4.0);
  CHECK(r.area_hat == 16.0);
  CHECK(r.union_area == 16.0);
  CHECK(r.iou == 0.25);
  CHECK(r.circumscribed == 16.0);
  CHECK(hbb_iou_from_distances({1, 1, 1, 1}, {0, 0, 0, 0}).iou == 0.0);
  CHECK(hbb_iou_from_distances({0, 0, 0, 0}, {0, 0, 0, 0}).iou == 0.0);
  CHECK_THROWS_AS(hbb_iou_from_distances({-1, 1, 1, 1}, {1, 1, 1, 1}), ValidationError);
}

TEST_CASE("distance IoU is symmetric, agrees with polygon IoU and with rasterization") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> d(0.2, 6.0);
  for (int i = 0; i < 100; ++i) {
    std::array<double, 4> l{d(rng), d(rng), d(rng), d(rng)}, m{d(rng), d(rng), d(rng), d(rng)};
    const double a = hbb_iou_from_distances(l, m).iou;
    CHECK(a == hbb_iou_from_distances(m, l).iou);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    ObbAnnotation A{0, (l[2] - l[0]) / 2, (l[3] - l[1]) / 2, l[0] + l[2], l[1] + l[3], 0};
    ObbAnnotation B{0, (m[2] - m[0]) / 2, (m[3] - m[1]) / 2, m[0] + m[2], m[1] + m[3], 0};
    CHECK(std::abs(a - polygon_iou(A, B)) < 1e-9);
    if (i < 20) CHECK(std::abs(a - oracle::raster_distance_iou(l, m)) < 1e-2);
  }
}

TEST_CASE("HBB of oriented boxes") {
  Hbb h = obb_to_hbb({0, 5, 5, 8, 4, 0});
  CHECK(h.x_min == doctest::Approx(1));
  CHECK(h.x_max == doctest::Approx(9));
  CHECK(h.y_min == doctest::Approx(3));
  CHECK(h.y_max == doctest::Approx(7));
  Hbb sq = obb_to_hbb({0, 0, 0, 10, 10, 45});
  CHECK(sq.width() == doctest::Approx(10 * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(sq.height() == doctest::Approx(14.1421356).epsilon(1e-8));
  Hbb a = obb_to_hbb({0, 3, 4, 8, 5, -90}), b = obb_to_hbb({0, 3, 4, 5, 8, 0});
  CHECK(a.x_min == doctest::Approx(b.x_min));
  CHECK(a.x_max == doctest::Approx(b.x_max));
  CHECK(a.y_min == doctest::Approx(b.y_min));
  CHECK(a.y_max == doctest::Approx(b.y_max));
}

TEST_CASE("encoding examples") {
  BoxEncoding e = encode_obb({0, 10, 10, 8, 4, 0}, {11, 9});
  CHECK(e.s == std::array<double, 4>{0, 0, 0, 0});
  CHECK(e.r == 1.0);
  CHECK(e.l[0] == doctest::Approx(5));
  CHECK(e.l[1] == doctest::Approx(1));
  CHECK(e.l[2] == doctest::Approx(3));
  CHECK(e.l[3] == doctest::Approx(3));
  BoxEncoding sq = encode_obb({0, 0, 0, 10, 10, 45}, {0, 0});
  CHECK(sq.r == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(encode_obb({0, 0, 0, 4, 2, 0}, {5, 0}), ValidationError);
  BoxEncoding bad = sq;
  bad.s = {0.1, 0.7, 0.3, 0.9};
  CHECK_THROWS_AS(decode_obb(bad, {0, 0}), ValidationError);
}

TEST_CASE("encode/decode round trip and scale invariance of r") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> f(0.05, 0.95);
  for (int i = 0; i < 1000; ++i) {
    ObbAnnotation b = oracle::random_box(rng);
    Hbb h = obb_to_hbb(b);
    Point p{h.x_min + f(rng) * h.width(), h.y_min + f(rng) * h.height()};
    BoxEncoding e = encode_obb(b, p);
    for (double l : e.l) CHECK(l >= 0.0);
    for (double s : e.s) CHECK((s >= 0.0 && s <= 1.0));
    CHECK((e.r > 0.0 && e.r <= 1.0));
    CHECK(vertex_error(b, decode_obb(e, p)) < 1e-6);
    if (i < 50) {
      ObbAnnotation big = b;
      big.w *= 3;
      big.h *= 3;
      CHECK(std::abs(encode_obb(big, {b.xc, b.yc}).r - encode_obb(b, {b.xc, b.yc}).r) < 1e-12);
    }
  }
}

TEST_CASE("polygon IoU") {
  ObbAnnotation a{0, 10, 10, 8, 4, 30};
  CHECK(polygon_iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(polygon_iou(a, {0, 100, 100, 8, 4, 30}) == 0.0);
  CHECK(polygon_iou(a, {0, 10, 10, 4, 8, -60}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(polygon_iou(a, {0, 10, 10, 0, 8, 0}) == 0.0);
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    ObbAnnotation x = oracle::random_box(rng), y = oracle::nearby_box(rng, x);
    const double v = polygon_iou(x, y);
    CHECK(v == doctest::Approx(polygon_iou(y, x)).epsilon(1e-12));
    CHECK((v >= 0.0 && v <= 1.0));
    if (i < 25) CHECK(std::abs(v - oracle::raster_iou(x, y)) < 1e-2);
  }
}

TEST_CASE("canonical form") {
  ObbAnnotation c = canonicalize({0, 1, 2, 3, 6, 10});
  CHECK(c.w == 6);
  CHECK(c.h == 3);
  CHECK(c.theta == doctest::Approx(-80));
  CHECK(vertex_error(c, {0, 1, 2, 3, 6, 10}) < 1e-9);
  CHECK(canonicalize({0, 0, 0, 5, 2, 90}).theta == doctest::Approx(-90));
  CHECK_THROWS_AS(validate_obb({0, 0, 0, 0, 2, 0}), ValidationError);
  CHECK_THROWS_AS(validate_obb({0, 0, 0, 1, 2, NAN}), ValidationError);
}

TEST_CASE("nms") {
  ObbAnnotation b{0, 10, 10, 8, 4, 0};
  auto kept = nms({{b, 0.8}, {b, 0.9}}, 0.45);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == 0.9);
  CHECK(nms({{b, 0.8}, {{0, 50, 50, 8, 4, 0}, 0.9}}, 0.45).size() == 2);
  ObbAnnotation other = b;
  other.class_id = 1;
  CHECK(nms({{b, 0.8}, {other, 0.9}}, 0.45).size() == 2);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> s(0.01, 0.99);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<DetectionRecord> dets;
    for (int i = 0; i < 50; ++i) {
      DetectionRecord d{oracle::random_box(rng, 30.0), std::round(s(rng) * 20) / 20};
      dets.push_back(d);
    }
    auto got = nms(dets, 0.45);
    auto want = oracle::nms(dets, 0.45);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].obb == want[i].obb);
      CHECK(got[i].score == want[i].score);
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (i > 0) CHECK(got[i - 1].score >= got[i].score);
      for (std::size_t j = i + 1; j < got.size(); ++j) CHECK(polygon_iou(got[i].obb, got[j].obb) <= 0.45);
    }
  }
}

}  // TEST_SUITE
