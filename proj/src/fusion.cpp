// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/fusion.hpp"

#include <cmath>

#include "mudet/error.hpp"

namespace mudet {

namespace {

// (C, M, N) -> (M*N, C)
Tensor to_sequence(const Tensor& z) {
  return transpose(reshape(z, {z.dim(0), z.dim(1) * z.dim(2)}));
}

Tensor mask_tensor(const std::vector<std::uint8_t>& m, std::size_t rows, std::size_t cols) {
  std::vector<double> v(m.begin(), m.end());
  return Tensor::from({1, rows, cols}, std::move(v));
}

void require_map(const Tensor& t, std::size_t rows, std::size_t cols, const char* what) {
  if (t.rank() != 3 || t.dim(0) != 1 || t.dim(1) != rows || t.dim(2) != cols) {
    throw ShapeError(std::string(what) + " must be (1, " + std::to_string(rows) + ", " +
                     std::to_string(cols) + "), got " + shape_str(t.shape()));
  }
}

}  // namespace

ConvBlockParams linear_1x1(std::size_t in, std::size_t out) {
  return ConvBlockParams::zeros(in, out, 1, 1, /*use_bn=*/false, /*leaky_slope=*/1.0);
}

CrossAttentionParams CrossAttentionParams::init(std::size_t rgb_channels, std::size_t h_channels,
                                                std::size_t key_dim, std::mt19937_64& rng) {
  CrossAttentionParams p;
  p.query = ConvBlockParams::init(rgb_channels, key_dim, 1, 1, rng, false, 1.0);
  p.key = ConvBlockParams::init(h_channels, key_dim, 1, 1, rng, false, 1.0);
  p.value = ConvBlockParams::init(rgb_channels, rgb_channels, 1, 1, rng, false, 1.0);
  // Unit-variance projections for linear layers.
  for (ConvBlockParams* b : {&p.query, &p.key, &p.value}) {
    for (double& w : b->weight.mutable_data()) w *= std::sqrt(0.5);
  }
  return p;
}

CrossAttentionParams CrossAttentionParams::identity(std::size_t channels) {
  CrossAttentionParams p;
  p.query = linear_1x1(channels, channels);
  p.key = linear_1x1(channels, channels);
  p.value = linear_1x1(channels, channels);
  for (ConvBlockParams* b : {&p.query, &p.key, &p.value}) {
    auto w = b->weight.mutable_data();
    for (std::size_t c = 0; c < channels; ++c) w[c * channels + c] = 1.0;
  }
  return p;
}

void CrossAttentionParams::validate(std::size_t rgb_channels, std::size_t h_channels) const {
  for (const ConvBlockParams* b : {&query, &key, &value}) {
    b->validate();
    if (b->kernel() != 1) throw ValidationError("attention projections must be 1x1");
  }
  if (query.in_channels() != rgb_channels || value.in_channels() != rgb_channels) {
    throw ShapeError("attention query/value expect " + std::to_string(query.in_channels()) +
                     " RGB channels, features have " + std::to_string(rgb_channels));
  }
  if (key.in_channels() != h_channels) {
    throw ShapeError("attention key expects " + std::to_string(key.in_channels()) +
                     " height channels, features have " + std::to_string(h_channels));
  }
  if (query.out_channels() != key.out_channels()) {
    throw ShapeError("attention query and key widths differ");
  }
}

namespace {

void check_coregistered(const Tensor& z_rgb, const Tensor& z_h) {
  if (z_rgb.rank() != 3 || z_h.rank() != 3 || z_rgb.dim(1) != z_h.dim(1) ||
      z_rgb.dim(2) != z_h.dim(2)) {
    throw ShapeError("modalities are not co-registered: RGB features " +
                     shape_str(z_rgb.shape()) + ", height features " + shape_str(z_h.shape()));
  }
}

Tensor attention_weights(const Tensor& z_rgb, const Tensor& z_h, CrossAttentionParams& p) {
  Tensor q = to_sequence(conv_block_forward(z_rgb, p.query));
  Tensor k = to_sequence(conv_block_forward(z_h, p.key));
  const double scale = 1.0 / std::sqrt(static_cast<double>(p.key_dim()));
  // Scaling Q instead of the (MN x MN) score matrix gives the same scores.
  return softmax_rows(matmul(mul_scalar(q, scale), transpose(k)));
}

}  // namespace

Tensor cross_attention_weights(const Tensor& z_rgb, const Tensor& z_h, CrossAttentionParams& p) {
  check_coregistered(z_rgb, z_h);
  p.validate(z_rgb.dim(0), z_h.dim(0));
  return attention_weights(z_rgb, z_h, p);
}

Tensor cross_attention(const Tensor& z_rgb, const Tensor& z_h, CrossAttentionParams& p) {
  check_coregistered(z_rgb, z_h);
  p.validate(z_rgb.dim(0), z_h.dim(0));
  Tensor attn = attention_weights(z_rgb, z_h, p);
  Tensor v = to_sequence(conv_block_forward(z_rgb, p.value));
  Tensor mixed = matmul(attn, v);  // (M*N, C)
  const std::size_t c = p.value.out_channels();
  return reshape(transpose(mixed), {c, z_rgb.dim(1), z_rgb.dim(2)});
}

ConfidencePair confidence_maps(const Tensor& z_rgb, const Tensor& z_h, ConvBlockParams& head_rgb,
                               ConvBlockParams& head_h, double theta) {
  check_coregistered(z_rgb, z_h);
  if (head_rgb.out_channels() != 1 || head_h.out_channels() != 1) {
    throw ShapeError("confidence heads must produce a single channel");
  }
  if (head_rgb.kernel() != 1 || head_h.kernel() != 1) {
    throw ValidationError("confidence heads must be 1x1 convolutions");
  }
  if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("theta must lie in (0, 1)");
  ConfidencePair out;
  out.conf_rgb = sigmoid(conv_block_forward(z_rgb, head_rgb));
  out.conf_h = sigmoid(conv_block_forward(z_h, head_h));
  out.theta = theta;
  return out;
}

MaskTriple build_masks(const ConfidencePair& conf) {
  const Tensor& a = conf.conf_rgb;
  if (a.rank() != 3 || a.dim(0) != 1) {
    throw ShapeError("confidence maps must be (1, M, N), got " + shape_str(a.shape()));
  }
  require_map(conf.conf_h, a.dim(1), a.dim(2), "height confidence");
  MaskTriple m;
  m.rows = a.dim(1);
  m.cols = a.dim(2);
  m.easy.assign(m.size(), 0);
  m.rgb_only.assign(m.size(), 0);
  m.h_only.assign(m.size(), 0);
  auto cr = conf.conf_rgb.data();
  auto ch = conf.conf_h.data();
  const double t = conf.theta;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (cr[i] > t && ch[i] > t) {
      m.easy[i] = 1;
    } else if (cr[i] > t && ch[i] < t) {
      m.rgb_only[i] = 1;
    } else if (cr[i] < t && ch[i] > t) {
      m.h_only[i] = 1;
    }
  }
  if (BranchTrace::active()) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      BranchTrace::fold(m.easy[i] | (m.rgb_only[i] << 1) | (m.h_only[i] << 2));
    }
  }
  return m;
}

Tensor MaskTriple::easy_tensor() const { return mask_tensor(easy, rows, cols); }
Tensor MaskTriple::rgb_tensor() const { return mask_tensor(rgb_only, rows, cols); }
Tensor MaskTriple::h_tensor() const { return mask_tensor(h_only, rows, cols); }

MaskTriple MaskTriple::all_easy(std::size_t rows, std::size_t cols) {
  MaskTriple m;
  m.rows = rows;
  m.cols = cols;
  m.easy.assign(rows * cols, 1);
  m.rgb_only.assign(rows * cols, 0);
  m.h_only.assign(rows * cols, 0);
  return m;
}

Tensor fuse(const Tensor& z_mix, const Tensor& z_rgb, const Tensor& z_h, const MaskTriple& masks,
            const ConfidencePair& conf) {
  if (z_mix.shape() != z_rgb.shape() || z_h.shape() != z_rgb.shape()) {
    throw ShapeError("fuse: feature shapes " + shape_str(z_mix.shape()) + ", " +
                     shape_str(z_rgb.shape()) + ", " + shape_str(z_h.shape()) + " differ");
  }
  if (z_rgb.rank() != 3 || masks.rows != z_rgb.dim(1) || masks.cols != z_rgb.dim(2)) {
    throw ShapeError("fuse: masks do not match features " + shape_str(z_rgb.shape()));
  }
  require_map(conf.conf_rgb, masks.rows, masks.cols, "RGB confidence");
  require_map(conf.conf_h, masks.rows, masks.cols, "height confidence");
  const std::size_t c = z_rgb.dim(0);
  Tensor easy = expand_channels(masks.easy_tensor(), c);
  Tensor weight_rgb = expand_channels(masks.rgb_tensor() * (2.0 - conf.conf_rgb), c);
  Tensor weight_h = expand_channels(masks.h_tensor() * (2.0 - conf.conf_h), c);
  Tensor mix_rgb = z_mix + z_rgb;
  Tensor mix_h = z_mix + z_h;
  return easy * (mix_rgb + z_h) + weight_rgb * mix_rgb + weight_h * mix_h;
}

}  // namespace mudet
