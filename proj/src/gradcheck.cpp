// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <random>

namespace mudet {

namespace {

Tensor random_leaf(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor random_const(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  return random_leaf(std::move(shape), rng, lo, hi).detach();
}

void randomize(ConvBlockParams& p, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (double& w : p.weight.mutable_data()) w = n(rng);
  for (double& b : p.bias.mutable_data()) b = n(rng);
}

using Trial = std::function<FiniteDiffReport(std::mt19937_64&, const GradCheckOptions&)>;

FiniteDiffReport check_ops(std::mt19937_64& rng, const GradCheckOptions& o) {
  Tensor x = random_leaf({5}, rng, -1.5, 1.5);
  Tensor y = random_leaf({5}, rng, 0.2, 2.0);
  auto f = [&] {
    Tensor s = sigmoid(x);
    Tensor a = pow(y, 1.5) * exp(mul_scalar(x, 0.3)) + log(s) - leaky_relu(x, 0.1);
    Tensor b = minimum(x, y) + maximum(x * 0.5, clamp(y, 0.5, 1.5));
    Tensor m = matmul(reshape(a, {5, 1}), reshape(b, {1, 5}));
    return sum(softmax_rows(m) * matmul(transpose(m), m)) + mean(a * b);
  };
  return finite_diff_report(f, {x, y}, o.step);
}

FiniteDiffReport check_focal(std::mt19937_64& rng, const GradCheckOptions& o) {
  Tensor logits = random_leaf({1, 3, 4}, rng, -3.0, 3.0);
  std::bernoulli_distribution coin(0.3);
  std::vector<double> labels(12);
  for (double& l : labels) l = coin(rng) ? 1.0 : 0.0;
  Tensor y = Tensor::from({1, 3, 4}, labels);
  auto f = [&] { return sum(focal_loss(sigmoid(logits), y, 2.0)); };
  return finite_diff_report(f, {logits}, o.step);
}

Tensor random_box_map(std::mt19937_64& rng, std::size_t rows, std::size_t cols, bool leaf) {
  Tensor l = random_const({4, rows, cols}, rng, 1.0, 9.0);
  Tensor s = random_const({4, rows, cols}, rng, 0.05, 0.95);
  Tensor r = random_const({1, rows, cols}, rng, 0.3, 1.0);
  Tensor t = concat_channels({l, s, r}).detach();
  if (!leaf) return t;
  return Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
}

FiniteDiffReport check_regression(std::mt19937_64& rng, const GradCheckOptions& o) {
  Tensor gt = random_box_map(rng, 2, 3, false);
  Tensor pred = random_box_map(rng, 2, 3, true);
  auto f = [&] { return sum(obb_regression_loss_map(gt, pred)); };
  return finite_diff_report(f, {pred}, o.step);
}

FiniteDiffReport check_attention(std::mt19937_64& rng, const GradCheckOptions& o) {
  Tensor z_rgb = random_leaf({2, 2, 4}, rng, -1.0, 1.0);
  Tensor z_h = random_leaf({2, 2, 4}, rng, -1.0, 1.0);
  CrossAttentionParams p = CrossAttentionParams::init(2, 2, 2, rng);
  Tensor w = random_const({2, 2, 4}, rng, -1.0, 1.0);
  auto f = [&] { return sum(cross_attention(z_rgb, z_h, p) * w); };
  return finite_diff_report(f, {z_rgb, z_h, p.query.weight, p.key.weight, p.value.weight,
                               p.query.bias, p.key.bias},
                           o.step);
}

FiniteDiffReport check_fuse(std::mt19937_64& rng, const GradCheckOptions& o) {
  const Shape s{3, 3, 3};
  Tensor mix = random_leaf(s, rng, -1, 1), zr = random_leaf(s, rng, -1, 1),
         zh = random_leaf(s, rng, -1, 1);
  Tensor ar = random_leaf({1, 3, 3}, rng, -3, 3), ah = random_leaf({1, 3, 3}, rng, -3, 3);
  Tensor w = random_const(s, rng, -1, 1);
  auto f = [&] {
    ConfidencePair c{sigmoid(ar), sigmoid(ah), 0.4};
    return sum(fuse(mix, zr, zh, build_masks(c), c) * w);
  };
  return finite_diff_report(f, {mix, zr, zh, ar, ah}, o.step);
}

FiniteDiffReport check_conv_block(std::mt19937_64& rng, const GradCheckOptions& o) {
  Tensor x = random_leaf({3, 6, 6}, rng, -1, 1);
  ConvBlockParams p = ConvBlockParams::init(3, 4, 3, 2, rng);
  randomize(p, rng, 0.4);
  for (double& g : p.bn.gamma.mutable_data()) g = 1.2;
  Tensor w = random_const({4, 3, 3}, rng, -1, 1);
  auto f = [&] { return sum(conv_block_forward(x, p, true) * w); };
  return finite_diff_report(f, {x, p.weight, p.bias, p.bn.gamma, p.bn.beta}, o.step);
}

FiniteDiffReport check_total_loss(std::mt19937_64& rng, const GradCheckOptions& o) {
  const std::size_t rows = 4, cols = 4, stride = 4;
  std::vector<ObbAnnotation> gts{{0, 6.0, 5.0, 7.0, 3.0, 20.0}, {0, 9.5, 13.0, 6.0, 4.0, -35.0}};
  TargetAssignment t = assign_targets(gts, rows, cols, stride, 1);
  Tensor logits = random_leaf({1, rows, cols}, rng, -2, 2);
  Tensor box = random_box_map(rng, rows, cols, true);
  Tensor cr = random_leaf({1, rows, cols}, rng, -3, 3), ch = random_leaf({1, rows, cols}, rng, -3, 3);
  LossConfig cfg{2.0, 0.4};
  auto f = [&] {
    ConfidencePair c{sigmoid(cr), sigmoid(ch), cfg.theta};
    MaskTriple m = build_masks(c);
    LocationLosses terms = location_losses({sigmoid(logits), box}, t, cfg);
    return total_loss(terms, t, m) + confidence_loss(c, t, cfg);
  };
  return finite_diff_report(f, {logits, box, cr, ch}, o.step);
}

FiniteDiffReport check_micro_model(std::mt19937_64& rng, const GradCheckOptions& o) {
  const std::uint64_t s = rng();
  ModelState m = micro_model(s);
  PreparedInput in = micro_input(s);
  std::vector<Tensor> leaves;
  for (auto& p : m.parameters()) leaves.push_back(p.tensor);
  auto f = [&] { return sample_loss(m, in, true).objective; };
  return finite_diff_report(f, leaves, o.step, o.model_coords, s);
}

}  // namespace

ModelConfig micro_model_config() {
  ModelConfig c;
  c.detector.rgb_blocks = {4, 8};
  c.detector.h_blocks = {4, 8};
  c.detector.stride = 2;
  c.detector.head_channels = 4;
  c.detector.modality = Modality::multimodal;
  c.fusion.attn_channels = 4;
  c.fusion.theta = 0.4;
  c.loss.theta = 0.4;
  return c;
}

PreparedInput micro_input(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  PreparedInput in;
  in.id = "micro";
  in.width = in.height = 16;
  in.rgb = random_const({5, 16, 16}, rng, 0.0, 1.0);
  in.h = random_const({1, 16, 16}, rng, 0.0, 3.0);
  std::uniform_real_distribution<double> u(3.0, 13.0), a(-80.0, 80.0);
  for (int k = 0; k < 2; ++k) in.annotations.push_back({0, u(rng), u(rng), 6.0, 3.0, a(rng)});
  return in;
}

ModelState micro_model(std::uint64_t seed) {
  ModelConfig c = micro_model_config();
  c.detector.seed = seed;
  ModelState m = ModelState::init(c);
  std::mt19937_64 rng(seed ^ 0xc0ffeeULL);
  randomize(m.conf_rgb, rng, 0.3);
  randomize(m.conf_h, rng, 0.3);
  randomize(m.head_cls, rng, 0.3);
  randomize(m.head_box, rng, 0.3);
  return m;
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt) {
  const std::vector<std::pair<std::string, Trial>> checks{
      {"ops", check_ops},
      {"focal_loss", check_focal},
      {"obb_regression_loss", check_regression},
      {"cross_attention", check_attention},
      {"fuse", check_fuse},
      {"conv_block", check_conv_block},
      {"total_loss", check_total_loss},
      {"micro_model", check_micro_model}};
  std::vector<GradCheckResult> out;
  for (std::size_t k = 0; k < checks.size(); ++k) {
    GradCheckResult r;
    r.name = checks[k].first;
    for (std::size_t t = 0; t < opt.trials; ++t) {
      std::mt19937_64 rng(opt.seed * 1000003ULL + k * 7919ULL + t);
      FiniteDiffReport t_r = checks[k].second(rng, opt);
      r.max_error = std::max(r.max_error, t_r.max_error);
      r.checked += t_r.checked;
      r.skipped += t_r.skipped;
      ++r.trials;
    }
    r.passed = r.max_error < opt.tolerance;
    out.push_back(r);
  }
  return out;
}

}  // namespace mudet
