// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mudet/error.hpp"

namespace mudet {

void LossConfig::validate() const {
  if (!(focal_gamma >= 0.0)) throw ValidationError("focal gamma must be >= 0");
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("theta must lie in (0, 1)");
}

double focal_loss(double p_hat, int label, double gamma) {
  const double p = std::clamp(p_hat, kProbClamp, 1.0 - kProbClamp);
  const double pt = label == 1 ? p : 1.0 - p;
  return -std::pow(1.0 - pt, gamma) * std::log(pt);
}

Tensor focal_loss(const Tensor& p_hat, const Tensor& labels, double gamma) {
  if (p_hat.shape() != labels.shape()) {
    throw ShapeError("focal_loss: probabilities " + shape_str(p_hat.shape()) + " vs labels " +
                     shape_str(labels.shape()));
  }
  Tensor p = clamp(p_hat, kProbClamp, 1.0 - kProbClamp);
  // p_t = y p + (1 - y)(1 - p) with constant y.
  Tensor pt = labels * p + (1.0 - labels) * (1.0 - p);
  return -1.0 * pow(1.0 - pt, gamma) * log(pt);
}

double obb_regression_loss(const BoxEncoding& gt, const BoxEncoding& pred) {
  double loss = 1.0 - hbb_iou_from_distances(gt.l, pred.l).iou;
  for (std::size_t i = 0; i < 4; ++i) loss += (gt.s[i] - pred.s[i]) * (gt.s[i] - pred.s[i]);
  return loss + (gt.r - pred.r) * (gt.r - pred.r);
}

Tensor encoding_to_tensor(const BoxEncoding& e) {
  return Tensor::from({kBoxChannels, 1, 1}, {e.l[0], e.l[1], e.l[2], e.l[3], e.s[0], e.s[1],
                                             e.s[2], e.s[3], e.r});
}

BoxEncoding encoding_at(const Tensor& box_map, std::size_t row, std::size_t col) {
  if (box_map.rank() != 3 || box_map.dim(0) != kBoxChannels) {
    throw ShapeError("box map must be (9, M, N), got " + shape_str(box_map.shape()));
  }
  const std::size_t plane = box_map.dim(1) * box_map.dim(2);
  const std::size_t i = row * box_map.dim(2) + col;
  auto d = box_map.data();
  BoxEncoding e;
  for (std::size_t k = 0; k < 4; ++k) {
    e.l[k] = d[k * plane + i];
    e.s[k] = d[(4 + k) * plane + i];
  }
  e.r = d[8 * plane + i];
  return e;
}

Tensor obb_regression_loss_map(const Tensor& gt, const Tensor& pred) {
  if (gt.shape() != pred.shape() || gt.rank() != 3 || gt.dim(0) != kBoxChannels) {
    throw ShapeError("regression maps must both be (9, M, N), got " + shape_str(gt.shape()) +
                     " and " + shape_str(pred.shape()));
  }
  auto ch = [](const Tensor& t, std::size_t c) { return slice_channels(t, c, c + 1); };
  Tensor l[4], lh[4];
  for (std::size_t k = 0; k < 4; ++k) {
    l[k] = ch(gt, k);
    lh[k] = ch(pred, k);
  }
  Tensor area = (l[0] + l[2]) * (l[1] + l[3]);
  Tensor area_hat = (lh[0] + lh[2]) * (lh[1] + lh[3]);
  Tensor overlap = (minimum(l[0], lh[0]) + minimum(l[2], lh[2])) *
                   (minimum(l[1], lh[1]) + minimum(l[3], lh[3]));
  Tensor uni = area + area_hat - overlap;
  Tensor iou = overlap * pow(uni, -1.0);
  Tensor ds = slice_channels(gt, 4, 9) - slice_channels(pred, 4, 9);
  Tensor sq = ds * ds;
  Tensor shape_terms = ch(sq, 0) + ch(sq, 1) + ch(sq, 2) + ch(sq, 3) + ch(sq, 4);
  return (1.0 - iou) + shape_terms;
}

// ---------------------------------------------------------------------------

std::size_t TargetAssignment::positives() const {
  return static_cast<std::size_t>(std::count(objectness.begin(), objectness.end(), 1));
}

Point TargetAssignment::sampling_point(std::size_t row, std::size_t col) const {
  return {(static_cast<double>(col) + 0.5) * static_cast<double>(stride),
          (static_cast<double>(row) + 0.5) * static_cast<double>(stride)};
}

Tensor TargetAssignment::objectness_tensor() const {
  return Tensor::from({1, rows, cols}, std::vector<double>(objectness.begin(), objectness.end()));
}

TargetAssignment assign_targets(const std::vector<ObbAnnotation>& gts, std::size_t rows,
                                std::size_t cols, std::size_t stride, std::size_t num_classes) {
  if (stride == 0 || num_classes == 0) throw ValidationError("stride and class count must be > 0");
  TargetAssignment t;
  t.rows = rows;
  t.cols = cols;
  t.stride = stride;
  t.num_classes = num_classes;
  const std::size_t plane = rows * cols;
  t.objectness.assign(plane, 0);
  t.gt_index.assign(plane, -1);
  std::vector<double> best_dist(plane, std::numeric_limits<double>::infinity());
  std::vector<BoxEncoding> enc(plane);

  const double s = static_cast<double>(stride);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const ObbAnnotation& box = gts[g];
    if (box.class_id < 0 || static_cast<std::size_t>(box.class_id) >= num_classes) {
      throw ValidationError("ground-truth class " + std::to_string(box.class_id) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
    if (box.xc < 0 || box.yc < 0) continue;
    const auto col = static_cast<std::size_t>(box.xc / s);
    const auto row = static_cast<std::size_t>(box.yc / s);
    if (row >= rows || col >= cols) continue;
    const std::size_t i = row * cols + col;
    const Point p = t.sampling_point(row, col);
    const Hbb hbb = obb_to_hbb(box);
    if (p.x < hbb.x_min || p.x > hbb.x_max || p.y < hbb.y_min || p.y > hbb.y_max) continue;
    const double d = std::hypot(p.x - box.xc, p.y - box.yc);
    if (d < best_dist[i]) {
      best_dist[i] = d;
      t.gt_index[i] = static_cast<int>(g);
      t.objectness[i] = 1;
      enc[i] = encode_obb(box, p);
    }
  }

  std::vector<double> cls(num_classes * plane, 0.0), box(kBoxChannels * plane, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    if (!t.objectness[i]) continue;
    cls[static_cast<std::size_t>(gts[static_cast<std::size_t>(t.gt_index[i])].class_id) * plane +
        i] = 1.0;
    for (std::size_t k = 0; k < 4; ++k) {
      box[k * plane + i] = enc[i].l[k];
      box[(4 + k) * plane + i] = enc[i].s[k];
    }
    box[8 * plane + i] = enc[i].r;
  }
  t.class_targets = Tensor::from({num_classes, rows, cols}, std::move(cls));
  t.box_targets = Tensor::from({kBoxChannels, rows, cols}, std::move(box));
  t.objectness_rgb = t.objectness_tensor();
  t.objectness_h = t.objectness_tensor();
  return t;
}

// ---------------------------------------------------------------------------

LocationLosses location_losses(const HeadPrediction& pred, const TargetAssignment& targets,
                               const LossConfig& cfg) {
  if (pred.cls_prob.shape() != targets.class_targets.shape()) {
    throw ShapeError("class predictions " + shape_str(pred.cls_prob.shape()) +
                     " do not match targets " + shape_str(targets.class_targets.shape()));
  }
  LocationLosses out;
  Tensor focal = focal_loss(pred.cls_prob, targets.class_targets, cfg.focal_gamma);
  out.cls = slice_channels(focal, 0, 1);
  for (std::size_t k = 1; k < targets.num_classes; ++k) {
    out.cls = out.cls + slice_channels(focal, k, k + 1);
  }
  out.reg = targets.objectness_tensor() * obb_regression_loss_map(targets.box_targets, pred.box);
  return out;
}

namespace {

Tensor weighted_mean(const LocationLosses& terms, const TargetAssignment& targets,
                     const std::vector<double>& weight) {
  double n = 0.0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    if (weight[i] != 0.0 && targets.objectness[i]) n += 1.0;
  }
  if (n == 0.0) return Tensor::scalar(0.0);
  Tensor w = Tensor::from({1, targets.rows, targets.cols}, weight);
  return mul_scalar(sum(w * terms.combined()), 1.0 / n);
}

void check_masks(const MaskTriple& masks, const TargetAssignment& targets) {
  if (masks.rows != targets.rows || masks.cols != targets.cols) {
    throw ShapeError("masks and targets cover different grids");
  }
}

}  // namespace

Tensor easy_loss(const LocationLosses& terms, const TargetAssignment& targets,
                 const MaskTriple& masks) {
  check_masks(masks, targets);
  return weighted_mean(terms, targets, std::vector<double>(masks.easy.begin(), masks.easy.end()));
}

Tensor hard_loss(const LocationLosses& terms, const TargetAssignment& targets,
                 const MaskTriple& masks) {
  check_masks(masks, targets);
  std::vector<double> w(masks.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = masks.rgb_only[i] + masks.h_only[i];
  return weighted_mean(terms, targets, w);
}

Tensor total_loss(const LocationLosses& terms, const TargetAssignment& targets,
                  const MaskTriple& masks) {
  return easy_loss(terms, targets, masks) + hard_loss(terms, targets, masks);
}

Tensor confidence_loss(const ConfidencePair& conf, const TargetAssignment& targets,
                       const LossConfig& cfg) {
  const double norm = 1.0 / std::max<double>(1.0, static_cast<double>(targets.positives()));
  Tensor l = sum(focal_loss(conf.conf_rgb, targets.objectness_rgb, cfg.focal_gamma)) +
             sum(focal_loss(conf.conf_h, targets.objectness_h, cfg.focal_gamma));
  return mul_scalar(l, norm);
}

}  // namespace mudet
