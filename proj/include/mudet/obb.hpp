// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Oriented-box geometry: vertex/HBB conversion, the (l, s, r) point-relative
// encoding, distance-based HBB IoU, exact convex IoU and rotated NMS.
//
// Angles are in degrees. Image coordinates: x to the right, y down. A box
// (xc, yc, w, h, theta) has its w side along (cos theta, sin theta).

#pragma once

#include <array>
#include <compare>
#include <vector>

namespace mudet {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct ObbAnnotation {
  int class_id = 0;
  double xc = 0.0;
  double yc = 0.0;
  double w = 0.0;
  double h = 0.0;
  double theta = 0.0;

  bool operator==(const ObbAnnotation&) const = default;
  double area() const { return w * h; }
};

/// Axis-aligned box [x_min, x_max] x [y_min, y_max].
struct Hbb {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
};

/// l: distances (left, top, right, bottom) from a sampling point to the HBB
/// edges. s: vertex offsets along the top, right, bottom and left edges,
/// measured clockwise from the corners (top-left, top-right, bottom-right,
/// bottom-left) and normalized by the edge length. r: OBB area / HBB area.
struct BoxEncoding {
  std::array<double, 4> l{};
  std::array<double, 4> s{};
  double r = 1.0;
};

struct DetectionRecord {
  ObbAnnotation obb;
  double score = 0.0;
};

/// Corners in cyclic order (counter-clockwise in the y-up sense).
std::array<Point, 4> obb_vertices(const ObbAnnotation& obb);
Hbb obb_to_hbb(const ObbAnnotation& obb);
double polygon_area(const std::vector<Point>& poly);

/// w >= h and theta in [-90, 90); squares use theta in [-45, 45).
ObbAnnotation canonicalize(const ObbAnnotation& obb);
/// Throws ValidationError unless w > 0, h > 0 and all values are finite.
void validate_obb(const ObbAnnotation& obb);

struct HbbIou {
  double iou = 0.0;
  double overlap = 0.0;
  double union_area = 0.0;
  /// Area of the smallest HBB enclosing both; reported, not used by the loss.
  double circumscribed = 0.0;
  double area = 0.0;
  double area_hat = 0.0;
};

/// Both boxes share the sampling point. Degenerate union -> iou 0.
HbbIou hbb_iou_from_distances(const std::array<double, 4>& l, const std::array<double, 4>& l_hat);

/// Throws ValidationError if `point` lies outside the box's HBB.
BoxEncoding encode_obb(const ObbAnnotation& obb, Point point);
/// Exact inverse of encode_obb. Throws ValidationError when the s offsets do
/// not describe a parallelogram within 1e-6.
ObbAnnotation decode_obb(const BoxEncoding& enc, Point point, int class_id = 0);
/// Tolerant decode for network predictions: symmetrizes s, treats r >= 0.9 as
/// axis-aligned, and fits a rectangle.
ObbAnnotation decode_obb_prediction(const BoxEncoding& enc, Point point, int class_id = 0);

/// Exact intersection-over-union of two rotated rectangles.
double polygon_iou(const ObbAnnotation& a, const ObbAnnotation& b);
double polygon_intersection_area(const ObbAnnotation& a, const ObbAnnotation& b);
/// Intersection polygon (counter-clockwise), empty when disjoint.
std::vector<Point> polygon_intersection(const ObbAnnotation& a, const ObbAnnotation& b);

/// Descending score; ties by ascending (xc, yc, w, h, theta, class_id).
bool detection_before(const DetectionRecord& a, const DetectionRecord& b);

/// Greedy class-aware suppression; keeps a box unless it overlaps an already
/// kept box of the same class with IoU > threshold. Output by descending score.
std::vector<DetectionRecord> nms(std::vector<DetectionRecord> dets, double iou_threshold);

}  // namespace mudet
