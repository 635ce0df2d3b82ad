// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Cross-modal attention between the RGB and height streams, per-modality
// confidence maps, hard/easy masks and the mask-weighted feature fusion.

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "mudet/nn.hpp"
#include "mudet/tensor.hpp"

namespace mudet {

/// Query/key/value projections: queries and values from RGB features, keys
/// from height features. All three are linear 1x1 convolutions.
struct CrossAttentionParams {
  ConvBlockParams query;  // RGB channels -> d
  ConvBlockParams key;    // height channels -> d
  ConvBlockParams value;  // RGB channels -> RGB channels

  std::size_t key_dim() const { return query.out_channels(); }

  static CrossAttentionParams init(std::size_t rgb_channels, std::size_t h_channels,
                                   std::size_t key_dim, std::mt19937_64& rng);
  /// Identity-style projections; requires rgb == h == key_dim channels.
  static CrossAttentionParams identity(std::size_t channels);

  void validate(std::size_t rgb_channels, std::size_t h_channels) const;
};

/// 1x1 linear projection block (no BN, identity activation).
ConvBlockParams linear_1x1(std::size_t in, std::size_t out);

struct ConfidencePair {
  Tensor conf_rgb;  // (1, M, N), values in (0, 1)
  Tensor conf_h;
  double theta = 0.2;
};

/// Binary (M, N) maps; at most one is set at any location.
struct MaskTriple {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> easy;
  std::vector<std::uint8_t> rgb_only;
  std::vector<std::uint8_t> h_only;

  std::size_t size() const { return rows * cols; }
  /// Constant (1, M, N) tensors for use in fused expressions.
  Tensor easy_tensor() const;
  Tensor rgb_tensor() const;
  Tensor h_tensor() const;
  /// All-easy triple, used by single-modality variants.
  static MaskTriple all_easy(std::size_t rows, std::size_t cols);
};

/// softmax(Q K^T / sqrt(d)) V over row-major flattened locations.
Tensor cross_attention(const Tensor& z_rgb, const Tensor& z_h, CrossAttentionParams& p);

/// Attention weights (M*N, M*N) for inspection; rows sum to one.
Tensor cross_attention_weights(const Tensor& z_rgb, const Tensor& z_h, CrossAttentionParams& p);

ConfidencePair confidence_maps(const Tensor& z_rgb, const Tensor& z_h, ConvBlockParams& head_rgb,
                               ConvBlockParams& head_h, double theta);

/// Strict comparisons: a confidence equal to theta counts as "not above".
MaskTriple build_masks(const ConfidencePair& conf);

/// easy * (mix + rgb + h) + rgb_only * (mix + rgb) * (2 - conf_rgb)
///   + h_only * (mix + h) * (2 - conf_h), masks broadcast over channels.
/// Masks are constants; gradient flows through features and confidences.
Tensor fuse(const Tensor& z_mix, const Tensor& z_rgb, const Tensor& z_h, const MaskTriple& masks,
            const ConfidencePair& conf);

}  // namespace mudet
