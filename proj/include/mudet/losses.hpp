// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Focal classification loss, OBB regression loss, grid label assignment and
// the easy / hard / total objectives.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mudet/fusion.hpp"
#include "mudet/obb.hpp"
#include "mudet/tensor.hpp"

namespace mudet {

struct LossConfig {
  double focal_gamma = 2.0;
  double theta = 0.2;
  void validate() const;
};

inline constexpr double kProbClamp = 1e-7;

/// -(1 - p_t)^gamma ln(p_t), p_t = p_hat for label 1 and 1 - p_hat otherwise.
/// p_hat is clamped to [1e-7, 1 - 1e-7].
double focal_loss(double p_hat, int label, double gamma);
/// Elementwise over identically shaped probability and {0,1} label tensors.
Tensor focal_loss(const Tensor& p_hat, const Tensor& labels, double gamma);

/// 1 - IoU(l, l_hat) + sum_i (s_i - s_hat_i)^2 + (r - r_hat)^2.
double obb_regression_loss(const BoxEncoding& gt, const BoxEncoding& pred);

/// Channel layout of dense box maps: l0..l3, s0..s3, r.
inline constexpr std::size_t kBoxChannels = 9;
Tensor encoding_to_tensor(const BoxEncoding& e);  // (9, 1, 1)
BoxEncoding encoding_at(const Tensor& box_map, std::size_t row, std::size_t col);

/// Per-location regression loss for (9, M, N) maps; result is (1, M, N).
/// Differentiable in `pred`; `gt` is a constant.
Tensor obb_regression_loss_map(const Tensor& gt, const Tensor& pred);

/// Dense supervision for one image on a stride-spaced grid. Each ground truth
/// goes to the cell containing its center (closest center wins a contested
/// cell); the sampling point is the cell center.
struct TargetAssignment {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 1;
  std::size_t num_classes = 1;
  std::vector<std::uint8_t> objectness;  // rows * cols
  std::vector<int> gt_index;             // -1 where unassigned
  Tensor class_targets;                  // (K, M, N) one-hot at positives
  Tensor box_targets;                    // (9, M, N), zero at negatives
  Tensor objectness_rgb;                 // (1, M, N)
  Tensor objectness_h;                   // (1, M, N)

  std::size_t positives() const;
  Point sampling_point(std::size_t row, std::size_t col) const;
  Tensor objectness_tensor() const;
};

TargetAssignment assign_targets(const std::vector<ObbAnnotation>& gts, std::size_t rows,
                                std::size_t cols, std::size_t stride, std::size_t num_classes);

/// Network outputs at one detection scale.
struct HeadPrediction {
  Tensor cls_prob;  // (K, M, N), probabilities
  Tensor box;       // (9, M, N), decoded encodings (l in pixels)
};

/// Per-location terms: reg (1, M, N), zero at negatives; cls (1, M, N),
/// focal loss summed over classes.
struct LocationLosses {
  Tensor reg;
  Tensor cls;
  Tensor combined() const { return reg + cls; }
};
LocationLosses location_losses(const HeadPrediction& pred, const TargetAssignment& targets,
                               const LossConfig& cfg);

/// Mean over easy positives of (reg + cls), with focal background terms of
/// easy negatives included in the sum. Zero when there is no easy positive.
Tensor easy_loss(const LocationLosses& terms, const TargetAssignment& targets,
                 const MaskTriple& masks);
/// Same with weight (rgb_only + h_only); masks act as constants.
Tensor hard_loss(const LocationLosses& terms, const TargetAssignment& targets,
                 const MaskTriple& masks);
/// Easy plus hard.
Tensor total_loss(const LocationLosses& terms, const TargetAssignment& targets,
                  const MaskTriple& masks);
/// Focal supervision of both confidence maps against per-modality
/// objectness, normalized by max(1, positives).
Tensor confidence_loss(const ConfidencePair& conf, const TargetAssignment& targets,
                       const LossConfig& cfg);

}  // namespace mudet
