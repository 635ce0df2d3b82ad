// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Per-stream input enhancement: power-law gamma channels for RGB and
// grayscale slicing for height maps.

#pragma once

#include <vector>

#include "mudet/tensor.hpp"

namespace mudet {

struct GammaConfig {
  double A = 1.0;
  double gamma = 1.0;
  void validate() const;
};

/// Height bands: [c_min, i0] -> h1, (i0, i1] passes through, (i1, c_max] -> h2.
struct SliceConfig {
  double h1 = 0.0;
  double h2 = 0.0;
  double i0 = 0.5;
  double i1 = 6.0;
  double c_min = 0.0;
  double c_max = 655.35;
  void validate() const;
};

struct UniEnhConfig {
  double A = 1.0;
  std::vector<double> gamma_coeffs{0.5, 1.5};
  SliceConfig slice;
  void validate() const;
};

/// (A * v)^gamma clamped to [0, 1]. Inputs must lie in [0, 1].
Tensor gamma_transform(const Tensor& img, const GammaConfig& cfg);
double gamma_value(double v, const GammaConfig& cfg);

Tensor grayscale_slice(const Tensor& hmap, const SliceConfig& cfg);
double slice_value(double v, const SliceConfig& cfg);

/// (3, H, W) RGB in [0, 1] -> (3 + k, H, W): the original channels followed by
/// one gamma-enhanced luminance channel per coefficient.
Tensor enhance_rgb(const Tensor& rgb, const UniEnhConfig& cfg);

}  // namespace mudet
