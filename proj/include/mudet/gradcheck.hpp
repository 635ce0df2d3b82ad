// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded finite-difference checks of the differentiable building blocks and
// of a 16x16 micro detector.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mudet/detector.hpp"

namespace mudet {

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;  // worst over trials
  std::size_t trials = 0;
  std::size_t checked = 0;  // coordinates compared, summed over trials
  std::size_t skipped = 0;  // coordinates redrawn because h crossed a branch
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  std::size_t trials = 10;
  double step = 1e-4;
  double tolerance = 1e-4;
  /// Parameter coordinates sampled per trial in the end-to-end check.
  std::size_t model_coords = 50;
};

/// Names: ops, focal_loss, obb_regression_loss, cross_attention, fuse,
/// conv_block, total_loss, micro_model.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt = {});

/// Two-stream model on 16x16 inputs: blocks {4, 8} per stream, stride 2.
ModelConfig micro_model_config();
/// Random inputs and two boxes on the 16x16 grid.
PreparedInput micro_input(std::uint64_t seed);
/// A micro model whose confidence heads are randomized so that both easy and
/// hard locations occur.
ModelState micro_model(std::uint64_t seed);

}  // namespace mudet
