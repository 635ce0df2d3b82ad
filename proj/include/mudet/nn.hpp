// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mudet/tensor.hpp"

namespace mudet {

/// One conv -> batch-norm -> leaky-ReLU block. With `use_bn` false the block
/// is conv + activation only; a slope of 1 makes the activation linear.
struct ConvBlockParams {
  Tensor weight;  // (out, in, k, k), k in {1, 3}
  Tensor bias;    // (out)
  BatchNormState bn;
  bool use_bn = true;
  double leaky_slope = 0.1;
  std::size_t stride = 1;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t kernel() const { return weight.dim(2); }

  /// He-style normal init for the kernel, zero bias, identity BN.
  static ConvBlockParams init(std::size_t in, std::size_t out, std::size_t kernel,
                              std::size_t stride, std::mt19937_64& rng, bool use_bn = true,
                              double leaky_slope = 0.1);
  /// All-zero kernel and bias, identity BN.
  static ConvBlockParams zeros(std::size_t in, std::size_t out, std::size_t kernel,
                               std::size_t stride = 1, bool use_bn = true,
                               double leaky_slope = 0.1);

  void validate() const;
};

/// LeakyReLU(BN(W * x + b)); same padding for 3x3, none for 1x1.
Tensor conv_block_forward(const Tensor& x, ConvBlockParams& p, bool training = false);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Trainable leaves of a block, prefixed with `prefix`.
void collect_parameters(ConvBlockParams& p, const std::string& prefix,
                        std::vector<NamedTensor>& out);
/// Running statistics (not trainable).
void collect_buffers(ConvBlockParams& p, const std::string& prefix,
                     std::vector<NamedTensor>& out);

}  // namespace mudet
