// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/nn.hpp"

#include <cmath>

#include "mudet/error.hpp"

namespace mudet {

namespace {

BatchNormState identity_bn(std::size_t channels) {
  BatchNormState bn;
  bn.gamma = Tensor::full({channels}, 1.0, true);
  bn.beta = Tensor::zeros({channels}, true);
  bn.running_mean = Tensor::zeros({channels});
  bn.running_var = Tensor::full({channels}, 1.0);
  return bn;
}

}  // namespace

ConvBlockParams ConvBlockParams::init(std::size_t in, std::size_t out, std::size_t kernel,
                                      std::size_t stride, std::mt19937_64& rng, bool use_bn,
                                      double leaky_slope) {
  ConvBlockParams p = zeros(in, out, kernel, stride, use_bn, leaky_slope);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(in * kernel *
                                                                                   kernel)));
  for (double& w : p.weight.mutable_data()) w = normal(rng);
  return p;
}

ConvBlockParams ConvBlockParams::zeros(std::size_t in, std::size_t out, std::size_t kernel,
                                       std::size_t stride, bool use_bn, double leaky_slope) {
  ConvBlockParams p;
  p.weight = Tensor::zeros({out, in, kernel, kernel}, true);
  p.bias = Tensor::zeros({out}, true);
  p.bn = identity_bn(out);
  p.use_bn = use_bn;
  p.leaky_slope = leaky_slope;
  p.stride = stride;
  p.validate();
  return p;
}

void ConvBlockParams::validate() const {
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv block weight must be (out, in, k, k), got " +
                     shape_str(weight.shape()));
  }
  if (kernel() != 1 && kernel() != 3) {
    throw ValidationError("conv block kernel must be 1 or 3, got " + std::to_string(kernel()));
  }
  if (stride != 1 && stride != 2) {
    throw ValidationError("conv block stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (bias.rank() != 1 || bias.dim(0) != out_channels()) {
    throw ShapeError("conv block bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(out_channels()) + " output channels");
  }
  if (use_bn) {
    for (double v : bn.running_var.data()) {
      if (!(v > 0.0)) throw ValidationError("conv block BN variance must be positive");
    }
  }
}

Tensor conv_block_forward(const Tensor& x, ConvBlockParams& p, bool training) {
  if (x.rank() != 3 || x.dim(0) != p.in_channels()) {
    throw ShapeError("conv block expects input (" + std::to_string(p.in_channels()) +
                     ", M, N), got " + shape_str(x.shape()) + " for weight " +
                     shape_str(p.weight.shape()));
  }
  const std::size_t pad = p.kernel() == 3 ? 1 : 0;
  Tensor y = conv2d(x, p.weight, p.bias, p.stride, pad);
  if (p.use_bn) y = batch_norm(y, p.bn, training);
  if (p.leaky_slope != 1.0) y = leaky_relu(y, p.leaky_slope);
  return y;
}

void collect_parameters(ConvBlockParams& p, const std::string& prefix,
                        std::vector<NamedTensor>& out) {
  out.push_back({prefix + ".weight", p.weight});
  out.push_back({prefix + ".bias", p.bias});
  if (p.use_bn) {
    out.push_back({prefix + ".bn.gamma", p.bn.gamma});
    out.push_back({prefix + ".bn.beta", p.bn.beta});
  }
}

void collect_buffers(ConvBlockParams& p, const std::string& prefix,
                     std::vector<NamedTensor>& out) {
  if (p.use_bn) {
    out.push_back({prefix + ".bn.running_mean", p.bn.running_mean});
    out.push_back({prefix + ".bn.running_var", p.bn.running_var});
  }
}

}  // namespace mudet
