// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mudet/error.hpp"

namespace mudet {

void GammaConfig::validate() const {
  if (!(A > 0.0) || !(gamma > 0.0)) {
    throw ValidationError("gamma config needs A > 0 and gamma > 0");
  }
}

void SliceConfig::validate() const {
  if (!(c_min <= i0 && i0 <= i1 && i1 <= c_max)) {
    std::ostringstream os;
    os << "slice config needs c_min <= i0 <= i1 <= c_max, got " << c_min << ", " << i0 << ", "
       << i1 << ", " << c_max;
    throw ValidationError(os.str());
  }
}

void UniEnhConfig::validate() const {
  for (double g : gamma_coeffs) GammaConfig{A, g}.validate();
  slice.validate();
}

double gamma_value(double v, const GammaConfig& cfg) {
  return std::clamp(std::pow(cfg.A * v, cfg.gamma), 0.0, 1.0);
}

Tensor gamma_transform(const Tensor& img, const GammaConfig& cfg) {
  cfg.validate();
  auto in = img.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!(in[i] >= 0.0 && in[i] <= 1.0)) {
      std::ostringstream os;
      os << "gamma_transform: value " << in[i] << " at index " << i << " outside [0, 1]";
      throw ValidationError(os.str());
    }
    out[i] = gamma_value(in[i], cfg);
  }
  return Tensor::from(img.shape(), std::move(out));
}

double slice_value(double v, const SliceConfig& cfg) {
  if (v <= cfg.i0) return cfg.h1;
  if (v <= cfg.i1) return v;
  return cfg.h2;
}

Tensor grayscale_slice(const Tensor& hmap, const SliceConfig& cfg) {
  cfg.validate();
  auto in = hmap.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (!(in[i] >= cfg.c_min && in[i] <= cfg.c_max)) {
      std::ostringstream os;
      os << "grayscale_slice: height " << in[i] << " at index " << i << " outside ["
         << cfg.c_min << ", " << cfg.c_max << "]";
      throw ValidationError(os.str());
    }
    out[i] = slice_value(in[i], cfg);
  }
  return Tensor::from(hmap.shape(), std::move(out));
}

Tensor enhance_rgb(const Tensor& rgb, const UniEnhConfig& cfg) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("enhance_rgb expects (3, H, W), got " + shape_str(rgb.shape()));
  }
  const std::size_t plane = rgb.dim(1) * rgb.dim(2);
  auto px = rgb.data();
  std::vector<double> gray(plane);
  for (std::size_t i = 0; i < plane; ++i) {
    gray[i] = std::clamp(0.299 * px[i] + 0.587 * px[plane + i] + 0.114 * px[2 * plane + i], 0.0,
                         1.0);
  }
  Tensor luminance = Tensor::from({1, rgb.dim(1), rgb.dim(2)}, std::move(gray));
  std::vector<Tensor> parts{rgb.detach()};
  for (double g : cfg.gamma_coeffs) parts.push_back(gamma_transform(luminance, {cfg.A, g}));
  return concat_channels(parts);
}

}  // namespace mudet
