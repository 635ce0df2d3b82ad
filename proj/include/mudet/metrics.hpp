// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Detection matching at an IoU threshold, precision/recall, all-point average
// precision and PR-curve CSV files.

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mudet/obb.hpp"

namespace mudet {

struct DetectionMatch {
  DetectionRecord det;
  bool tp = false;
  int gt = -1;  // matched ground-truth index within its image
  std::size_t image = 0;
};

struct MatchResult {
  std::vector<DetectionMatch> detections;  // in ranking order
  std::size_t num_gt = 0;

  std::size_t tp() const;
  std::size_t fp() const;
  std::size_t fn() const { return num_gt - tp(); }
};

/// Greedy matching in ranking order (detection_before). A detection is a true
/// positive when the unmatched ground truth of its class with the highest
/// polygon IoU (lowest index on ties) reaches `iou_threshold`.
MatchResult match_detections(std::vector<DetectionRecord> dets,
                             const std::vector<ObbAnnotation>& gts, double iou_threshold = 0.5,
                             std::size_t image = 0);

/// Pools per-image results into one ranking.
MatchResult merge_matches(const std::vector<MatchResult>& parts);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};
PrecisionRecall precision_recall(const MatchResult& m);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};
using PrCurve = std::vector<PrPoint>;

struct ApResult {
  double ap = 0.0;
  PrCurve curve;
  bool no_ground_truth = false;
};

/// sum_k P(k) (R(k) - R(k-1)) over distinct scores in descending order. With
/// `interpolate`, P(k) is replaced by the best precision at any lower threshold.
ApResult average_precision(const MatchResult& m, bool interpolate = false);
ApResult average_precision(const std::vector<DetectionRecord>& dets,
                           const std::vector<ObbAnnotation>& gts, double iou_threshold = 0.5,
                           bool interpolate = false);

struct EvalResult {
  double ap = 0.0;                   // mean over classes with ground truth
  std::map<int, ApResult> per_class;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
};

/// Dataset-level evaluation: images are matched independently, then pooled per
/// class. `dets[i]` and `gts[i]` belong to the same image.
EvalResult evaluate(const std::vector<std::vector<DetectionRecord>>& dets,
                    const std::vector<std::vector<ObbAnnotation>>& gts,
                    double iou_threshold = 0.5, bool interpolate = false);

/// "threshold,precision,recall" with six decimals.
std::string pr_csv(const PrCurve& curve);
PrCurve parse_pr_csv(const std::string& text);
void emit_pr_csv(const PrCurve& curve, const std::filesystem::path& path);

}  // namespace mudet
