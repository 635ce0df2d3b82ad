// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/obb.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <tuple>

#include "mudet/error.hpp"

namespace mudet {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kClipEps = 1e-9;

double cross(Point o, Point a, Point b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double wrap_angle(double theta, double lo, double period) {
  double t = std::fmod(theta - lo, period);
  if (t < 0) t += period;
  return t + lo;
}

}  // namespace

std::array<Point, 4> obb_vertices(const ObbAnnotation& obb) {
  const double c = std::cos(obb.theta * kDeg);
  const double s = std::sin(obb.theta * kDeg);
  const double hw = obb.w / 2.0, hh = obb.h / 2.0;
  const std::array<Point, 4> local{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
  std::array<Point, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {obb.xc + local[i].x * c - local[i].y * s, obb.yc + local[i].x * s + local[i].y * c};
  }
  return out;
}

Hbb obb_to_hbb(const ObbAnnotation& obb) {
  auto v = obb_vertices(obb);
  Hbb b{v[0].x, v[0].y, v[0].x, v[0].y};
  for (const Point& p : v) {
    b.x_min = std::min(b.x_min, p.x);
    b.y_min = std::min(b.y_min, p.y);
    b.x_max = std::max(b.x_max, p.x);
    b.y_max = std::max(b.y_max, p.y);
  }
  return b;
}

double polygon_area(const std::vector<Point>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point& p = poly[i];
    const Point& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

ObbAnnotation canonicalize(const ObbAnnotation& obb) {
  ObbAnnotation out = obb;
  if (out.w < out.h) {
    std::swap(out.w, out.h);
    out.theta += 90.0;
  }
  out.theta = out.w == out.h ? wrap_angle(out.theta, -45.0, 90.0)
                             : wrap_angle(out.theta, -90.0, 180.0);
  return out;
}

void validate_obb(const ObbAnnotation& obb) {
  for (double v : {obb.xc, obb.yc, obb.w, obb.h, obb.theta}) {
    if (!std::isfinite(v)) throw ValidationError("box has a non-finite field");
  }
  if (!(obb.w > 0.0 && obb.h > 0.0)) {
    std::ostringstream os;
    os << "box sides must be positive, got w=" << obb.w << " h=" << obb.h;
    throw ValidationError(os.str());
  }
}

HbbIou hbb_iou_from_distances(const std::array<double, 4>& l, const std::array<double, 4>& lh) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (l[i] < 0.0 || lh[i] < 0.0) throw ValidationError("HBB distances must be non-negative");
  }
  HbbIou r;
  r.area = (l[0] + l[2]) * (l[1] + l[3]);
  r.area_hat = (lh[0] + lh[2]) * (lh[1] + lh[3]);
  r.overlap = (std::min(l[0], lh[0]) + std::min(l[2], lh[2])) *
              (std::min(l[1], lh[1]) + std::min(l[3], lh[3]));
  r.circumscribed = (std::max(l[0], lh[0]) + std::max(l[2], lh[2])) *
                    (std::max(l[1], lh[1]) + std::max(l[3], lh[3]));
  r.union_area = r.area + r.area_hat - r.overlap;
  r.iou = r.union_area > 0.0 ? r.overlap / r.union_area : 0.0;
  return r;
}

BoxEncoding encode_obb(const ObbAnnotation& obb, Point point) {
  validate_obb(obb);
  const Hbb b = obb_to_hbb(obb);
  const double tol = 1e-9 * std::max({1.0, b.width(), b.height()});
  if (point.x < b.x_min - tol || point.x > b.x_max + tol || point.y < b.y_min - tol ||
      point.y > b.y_max + tol) {
    std::ostringstream os;
    os << "sampling point (" << point.x << ", " << point.y << ") lies outside the box HBB ["
       << b.x_min << ", " << b.x_max << "] x [" << b.y_min << ", " << b.y_max << "]";
    throw ValidationError(os.str());
  }
  const auto v = obb_vertices(obb);
  const double tie = 1e-9 * std::max({1.0, b.width(), b.height()});
  // Extreme vertex along a primary direction, ties resolved by a secondary one.
  auto extreme = [&](auto primary, auto secondary) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 4; ++i) {
      double d = primary(v[i]) - primary(v[best]);
      if (d > tie || (std::abs(d) <= tie && secondary(v[i]) > secondary(v[best]))) best = i;
    }
    return v[best];
  };
  const Point top = extreme([](Point p) { return -p.y; }, [](Point p) { return -p.x; });
  const Point right = extreme([](Point p) { return p.x; }, [](Point p) { return -p.y; });
  const Point bottom = extreme([](Point p) { return p.y; }, [](Point p) { return p.x; });
  const Point left = extreme([](Point p) { return -p.x; }, [](Point p) { return p.y; });

  const double W = b.width(), H = b.height();
  BoxEncoding e;
  e.l = {std::max(0.0, point.x - b.x_min), std::max(0.0, point.y - b.y_min),
         std::max(0.0, b.x_max - point.x), std::max(0.0, b.y_max - point.y)};
  e.s = {std::clamp((top.x - b.x_min) / W, 0.0, 1.0), std::clamp((right.y - b.y_min) / H, 0.0, 1.0),
         std::clamp((b.x_max - bottom.x) / W, 0.0, 1.0),
         std::clamp((b.y_max - left.y) / H, 0.0, 1.0)};
  e.r = std::clamp(obb.area() / (W * H), 0.0, 1.0);
  return e;
}

namespace {

std::array<Point, 4> encoded_vertices(const BoxEncoding& e, const Hbb& b) {
  const double W = b.width(), H = b.height();
  return {{{b.x_min + e.s[0] * W, b.y_min},
           {b.x_max, b.y_min + e.s[1] * H},
           {b.x_max - e.s[2] * W, b.y_max},
           {b.x_min, b.y_max - e.s[3] * H}}};
}

Hbb encoded_hbb(const BoxEncoding& e, Point p) {
  return {p.x - e.l[0], p.y - e.l[1], p.x + e.l[2], p.y + e.l[3]};
}

ObbAnnotation rectangle_from(const std::array<Point, 4>& v, int class_id) {
  const double ex = v[1].x - v[0].x, ey = v[1].y - v[0].y;
  const double fx = v[3].x - v[0].x, fy = v[3].y - v[0].y;
  ObbAnnotation o;
  o.class_id = class_id;
  o.w = std::hypot(ex, ey);
  o.h = o.w > 0.0 ? std::abs(ex * fy - ey * fx) / o.w : 0.0;
  o.theta = std::atan2(ey, ex) / kDeg;
  o.xc = (v[0].x + v[1].x + v[2].x + v[3].x) / 4.0;
  o.yc = (v[0].y + v[1].y + v[2].y + v[3].y) / 4.0;
  return canonicalize(o);
}

}  // namespace

ObbAnnotation decode_obb(const BoxEncoding& enc, Point point, int class_id) {
  const Hbb b = encoded_hbb(enc, point);
  if (!(b.width() > 0.0 && b.height() > 0.0)) {
    throw ValidationError("cannot decode a degenerate HBB");
  }
  const auto v = encoded_vertices(enc, b);
  // Diagonals of a parallelogram bisect each other.
  const double dx = (v[0].x + v[2].x) - (v[1].x + v[3].x);
  const double dy = (v[0].y + v[2].y) - (v[1].y + v[3].y);
  if (std::abs(dx) > 1e-6 || std::abs(dy) > 1e-6) {
    std::ostringstream os;
    os << "offsets s = (" << enc.s[0] << ", " << enc.s[1] << ", " << enc.s[2] << ", "
       << enc.s[3] << ") do not form a parallelogram";
    throw ValidationError(os.str());
  }
  return rectangle_from(v, class_id);
}

ObbAnnotation decode_obb_prediction(const BoxEncoding& enc, Point point, int class_id) {
  const Hbb b = encoded_hbb(enc, point);
  if (enc.r >= 0.9) {
    return canonicalize({class_id, (b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0,
                         b.width(), b.height(), 0.0});
  }
  BoxEncoding sym = enc;
  sym.s[0] = sym.s[2] = (enc.s[0] + enc.s[2]) / 2.0;
  sym.s[1] = sym.s[3] = (enc.s[1] + enc.s[3]) / 2.0;
  ObbAnnotation o = rectangle_from(encoded_vertices(sym, b), class_id);
  o.xc = (b.x_min + b.x_max) / 2.0;
  o.yc = (b.y_min + b.y_max) / 2.0;
  return o;
}

namespace {

std::vector<Point> ccw_polygon(const ObbAnnotation& o) {
  auto v = obb_vertices(o);
  std::vector<Point> poly(v.begin(), v.end());
  if (polygon_area(poly) < 0) std::reverse(poly.begin(), poly.end());
  return poly;
}

Point line_intersection(Point p, Point q, Point a, Point b) {
  const double d1 = cross(a, b, p), d2 = cross(a, b, q);
  const double t = d1 / (d1 - d2);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

std::vector<Point> polygon_intersection(const ObbAnnotation& a, const ObbAnnotation& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0)) return {};
  std::vector<Point> subject = ccw_polygon(a);
  const std::vector<Point> clip = ccw_polygon(b);
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Point ea = clip[e], eb = clip[(e + 1) % clip.size()];
    const double scale = std::max(1.0, std::hypot(eb.x - ea.x, eb.y - ea.y));
    std::vector<Point> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Point p = subject[i], q = subject[(i + 1) % subject.size()];
      const double dp = cross(ea, eb, p) / scale, dq = cross(ea, eb, q) / scale;
      const bool p_in = dp >= -kClipEps, q_in = dq >= -kClipEps;
      if (p_in) out.push_back(p);
      if (p_in != q_in && std::abs(dp - dq) > 0.0) {
        out.push_back(line_intersection(p, q, ea, eb));
      }
    }
    subject = std::move(out);
  }
  if (subject.size() < 3) return {};
  return subject;
}

double polygon_intersection_area(const ObbAnnotation& a, const ObbAnnotation& b) {
  const auto poly = polygon_intersection(a, b);
  return poly.empty() ? 0.0 : std::max(0.0, polygon_area(poly));
}

double polygon_iou(const ObbAnnotation& a, const ObbAnnotation& b) {
  const double inter = polygon_intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0) || inter <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool detection_before(const DetectionRecord& a, const DetectionRecord& b) {
  if (a.score != b.score) return a.score > b.score;
  const auto& p = a.obb;
  const auto& q = b.obb;
  return std::tie(p.xc, p.yc, p.w, p.h, p.theta, p.class_id) <
         std::tie(q.xc, q.yc, q.w, q.h, q.theta, q.class_id);
}

std::vector<DetectionRecord> nms(std::vector<DetectionRecord> dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw ValidationError("NMS threshold must lie in (0, 1)");
  }
  std::stable_sort(dets.begin(), dets.end(), detection_before);
  std::vector<DetectionRecord> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.obb.class_id == d.obb.class_id && polygon_iou(k.obb, d.obb) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace mudet
