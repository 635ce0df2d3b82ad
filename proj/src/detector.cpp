// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <random>
#include <thread>

#include "mudet/checkpoint.hpp"
#include "mudet/error.hpp"
#include "mudet/metrics.hpp"

namespace mudet {

std::string modality_name(Modality m) {
  switch (m) {
    case Modality::rgb_only:
      return "rgb_only";
    case Modality::h_only:
      return "h_only";
    case Modality::multimodal:
      return "multimodal";
  }
  return "?";
}

Modality parse_modality(const std::string& name) {
  if (name == "rgb_only") return Modality::rgb_only;
  if (name == "h_only") return Modality::h_only;
  if (name == "multimodal") return Modality::multimodal;
  throw ConfigError("unknown modality '" + name + "' (rgb_only, h_only, multimodal)");
}

void FusionConfig::validate() const {
  if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("fusion.theta must lie in (0, 1)");
  if (attn_channels == 0) throw ConfigError("fusion.attn_channels must be positive");
}

namespace {

std::size_t downsample_blocks(std::size_t stride) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < stride) ++n;
  return n;
}

}  // namespace

void DetectorConfig::validate() const {
  if (stride == 0 || (stride & (stride - 1)) != 0) {
    throw ConfigError("detector.stride must be a power of two");
  }
  const std::size_t down = downsample_blocks(stride);
  if (rgb_blocks.size() < std::max<std::size_t>(down, 1) ||
      h_blocks.size() < std::max<std::size_t>(down, 1)) {
    throw ConfigError("each backbone needs at least log2(stride) blocks");
  }
  for (auto c : rgb_blocks) {
    if (c == 0) throw ConfigError("detector.rgb_blocks entries must be positive");
  }
  for (auto c : h_blocks) {
    if (c == 0) throw ConfigError("detector.h_blocks entries must be positive");
  }
  if (modality == Modality::multimodal && rgb_blocks.back() != h_blocks.back()) {
    throw ConfigError("fusion needs equal output channels: rgb " +
                      std::to_string(rgb_blocks.back()) + " vs height " +
                      std::to_string(h_blocks.back()));
  }
  if (num_classes == 0 || head_channels == 0) {
    throw ConfigError("detector.num_classes and head_channels must be positive");
  }
  if (!(lr_initial > 0) || !(lr_final > 0) || lr_final > lr_initial) {
    throw ConfigError("need 0 < lr_final <= lr_initial");
  }
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("detector.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("detector.weight_decay must be >= 0");
  if (max_epochs == 0 || batch_size == 0 || val_every == 0) {
    throw ConfigError("max_epochs, batch_size and val_every must be positive");
  }
  if (!(conf_threshold > 0 && conf_threshold < 1)) {
    throw ConfigError("detector.conf_threshold must lie in (0, 1)");
  }
  if (!(nms_threshold > 0 && nms_threshold < 1)) {
    throw ConfigError("detector.nms_threshold must lie in (0, 1)");
  }
  if (!(cls_prior > 0 && cls_prior < 1)) throw ConfigError("detector.cls_prior must lie in (0, 1)");
}

void ModelConfig::validate() const {
  detector.validate();
  uni_enh.validate();
  fusion.validate();
  loss.validate();
  if (fusion.theta != loss.theta) {
    throw ConfigError("fusion.theta and loss.theta must agree");
  }
}

// ---------------------------------------------------------------------------
// Model

namespace {

std::vector<ConvBlockParams> make_stream(std::size_t in, const std::vector<std::size_t>& blocks,
                                         std::size_t stride, std::mt19937_64& rng) {
  const std::size_t down = downsample_blocks(stride);
  std::vector<ConvBlockParams> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    out.push_back(ConvBlockParams::init(in, blocks[i], 3, i < down ? 2 : 1, rng));
    in = blocks[i];
  }
  return out;
}

Tensor run_stream(const Tensor& x, std::vector<ConvBlockParams>& stream, bool training) {
  Tensor y = x;
  for (auto& b : stream) y = conv_block_forward(y, b, training);
  return y;
}

}  // namespace

ModelState ModelState::init(const ModelConfig& cfg) {
  cfg.validate();
  const DetectorConfig& d = cfg.detector;
  ModelState m;
  m.cfg = cfg;
  std::mt19937_64 rng(d.seed);
  const std::size_t rgb_in = 3 + cfg.uni_enh.gamma_coeffs.size();
  std::size_t feat = 0;
  if (m.uses_rgb()) {
    m.rgb_stream = make_stream(rgb_in, d.rgb_blocks, d.stride, rng);
    feat = d.rgb_blocks.back();
  }
  if (m.uses_height()) {
    m.h_stream = make_stream(1, d.h_blocks, d.stride, rng);
    feat = d.h_blocks.back();
  }
  if (d.modality == Modality::multimodal) {
    m.attention = CrossAttentionParams::init(feat, feat, cfg.fusion.attn_channels, rng);
    m.conf_rgb = linear_1x1(feat, 1);
    m.conf_h = linear_1x1(feat, 1);
  }
  m.head_stem = ConvBlockParams::init(feat, d.head_channels, 3, 1, rng);
  m.head_cls = ConvBlockParams::init(d.head_channels, d.num_classes, 1, 1, rng, false, 1.0);
  m.head_box = ConvBlockParams::init(d.head_channels, kBoxChannels, 1, 1, rng, false, 1.0);
  for (double& w : m.head_cls.weight.mutable_data()) w *= 0.1;
  for (double& w : m.head_box.weight.mutable_data()) w *= 0.1;
  for (double& b : m.head_cls.bias.mutable_data()) b = -std::log((1.0 - d.cls_prior) / d.cls_prior);
  for (const auto& p : m.parameters()) m.velocity.push_back(Tensor::zeros(p.tensor.shape()));
  return m;
}

std::vector<NamedTensor> ModelState::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < rgb_stream.size(); ++i) {
    collect_parameters(rgb_stream[i], "rgb." + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < h_stream.size(); ++i) {
    collect_parameters(h_stream[i], "h." + std::to_string(i), out);
  }
  if (cfg.detector.modality == Modality::multimodal) {
    collect_parameters(attention.query, "attn.query", out);
    collect_parameters(attention.key, "attn.key", out);
    collect_parameters(attention.value, "attn.value", out);
    collect_parameters(conf_rgb, "conf.rgb", out);
    collect_parameters(conf_h, "conf.h", out);
  }
  collect_parameters(head_stem, "head.stem", out);
  collect_parameters(head_cls, "head.cls", out);
  collect_parameters(head_box, "head.box", out);
  return out;
}

std::vector<NamedTensor> ModelState::buffers() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < rgb_stream.size(); ++i) {
    collect_buffers(rgb_stream[i], "rgb." + std::to_string(i), out);
  }
  for (std::size_t i = 0; i < h_stream.size(); ++i) {
    collect_buffers(h_stream[i], "h." + std::to_string(i), out);
  }
  collect_buffers(head_stem, "head.stem", out);
  return out;
}

std::vector<NamedTensor> ModelState::state() {
  std::vector<NamedTensor> out = parameters();
  for (auto& b : buffers()) out.push_back(b);
  out.push_back({"meta.modality",
                 Tensor::from({1}, {static_cast<double>(cfg.detector.modality)})});
  return out;
}

void save_model(ModelState& model, const std::filesystem::path& path) {
  save_checkpoint(path, model.state());
}

ModelState load_model(const ModelConfig& cfg, const std::filesystem::path& path) {
  ModelState m = ModelState::init(cfg);
  auto loaded = load_checkpoint(path);
  auto targets = m.state();
  for (const auto& t : loaded) {
    if (t.name == "meta.modality" && t.tensor.numel() == 1 &&
        t.tensor[0] != static_cast<double>(cfg.detector.modality)) {
      throw ConfigError("checkpoint was trained for a different modality than " +
                        modality_name(cfg.detector.modality));
    }
  }
  assign_checkpoint(loaded, targets);
  return m;
}

// ---------------------------------------------------------------------------
// Forward

PreparedInput prepare_input(const SceneSample& sample, const ModelConfig& cfg) {
  PreparedInput in;
  in.id = sample.id;
  in.annotations = sample.annotations;
  in.width = sample.rgb.width;
  in.height = sample.rgb.height;
  const Modality m = cfg.detector.modality;
  if (m != Modality::h_only) in.rgb = enhance_rgb(rgb_to_tensor(sample.rgb), cfg.uni_enh);
  if (m != Modality::rgb_only) {
    if (sample.hmap.codes.empty()) {
      throw ValidationError("scene '" + sample.id + "' has no height map");
    }
    if (m == Modality::h_only) {
      in.width = sample.hmap.width;
      in.height = sample.hmap.height;
    }
    in.h = grayscale_slice(height_to_tensor(sample.hmap), cfg.uni_enh.slice);
  }
  return in;
}

ForwardOutput forward(ModelState& model, const PreparedInput& in, bool training) {
  const DetectorConfig& d = model.cfg.detector;
  if (in.width % d.stride != 0 || in.height % d.stride != 0 || in.width == 0) {
    throw ConfigError("input " + std::to_string(in.width) + "x" + std::to_string(in.height) +
                      " is not divisible by stride " + std::to_string(d.stride));
  }
  ForwardOutput out;
  const std::size_t rows = in.height / d.stride, cols = in.width / d.stride;
  Tensor z;
  switch (d.modality) {
    case Modality::rgb_only:
      z = run_stream(in.rgb, model.rgb_stream, training);
      out.masks = MaskTriple::all_easy(rows, cols);
      break;
    case Modality::h_only:
      z = run_stream(in.h, model.h_stream, training);
      out.masks = MaskTriple::all_easy(rows, cols);
      break;
    case Modality::multimodal: {
      Tensor z_rgb = run_stream(in.rgb, model.rgb_stream, training);
      Tensor z_h = run_stream(in.h, model.h_stream, training);
      Tensor z_mix = cross_attention(z_rgb, z_h, model.attention);
      out.conf = confidence_maps(z_rgb, z_h, model.conf_rgb, model.conf_h, model.cfg.fusion.theta);
      out.has_conf = true;
      out.masks = build_masks(out.conf);
      z = fuse(z_mix, z_rgb, z_h, out.masks, out.conf);
      break;
    }
  }
  if (z.dim(1) != rows || z.dim(2) != cols) {
    throw ShapeError("backbone output " + shape_str(z.shape()) + " does not match the grid");
  }
  out.fused = z;
  Tensor stem = conv_block_forward(z, model.head_stem, training);
  out.head.cls_prob = sigmoid(conv_block_forward(stem, model.head_cls));
  Tensor raw = conv_block_forward(stem, model.head_box);
  Tensor l = mul_scalar(exp(clamp(slice_channels(raw, 0, 4), -6.0, 6.0)),
                        static_cast<double>(d.stride));
  out.head.box = concat_channels({l, sigmoid(slice_channels(raw, 4, kBoxChannels))});
  return out;
}

LossBreakdown sample_loss(ModelState& model, const PreparedInput& in, bool training) {
  ForwardOutput f = forward(model, in, training);
  const DetectorConfig& d = model.cfg.detector;
  TargetAssignment t = assign_targets(in.annotations, f.masks.rows, f.masks.cols, d.stride,
                                      d.num_classes);
  LocationLosses terms = location_losses(f.head, t, model.cfg.loss);
  Tensor easy = easy_loss(terms, t, f.masks);
  Tensor hard = hard_loss(terms, t, f.masks);
  LossBreakdown out;
  out.objective = easy + hard;
  out.easy = easy.item();
  out.hard = hard.item();
  if (f.has_conf) {
    Tensor c = confidence_loss(f.conf, t, model.cfg.loss);
    out.confidence = c.item();
    out.objective = out.objective + c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

std::string TrainLog::csv() const {
  std::string out = "epoch,loss_easy,loss_hard,loss_total,val_ap\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,", e.epoch, e.loss_easy, e.loss_hard,
                  e.loss_total);
    out += buf;
    if (e.val_ap >= 0) {
      std::snprintf(buf, sizeof(buf), "%.6f", e.val_ap);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

double learning_rate(const DetectorConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (total_steps <= 1) return cfg.lr_initial;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return cfg.lr_final +
         0.5 * (cfg.lr_initial - cfg.lr_final) * (1.0 + std::cos(std::numbers::pi * t));
}

TrainLog train(ModelState& model, const std::vector<PreparedInput>& train_set,
               const std::vector<PreparedInput>& val_set) {
  const DetectorConfig& d = model.cfg.detector;
  if (train_set.empty()) throw ValidationError("training set is empty");
  auto params = model.parameters();
  if (model.velocity.size() != params.size()) throw Error("velocity buffers out of sync");
  const std::size_t batches = (train_set.size() + d.batch_size - 1) / d.batch_size;
  const std::size_t total_steps = batches * d.max_epochs;
  std::mt19937_64 rng(d.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_set.size());
  TrainLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= d.max_epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog e;
    e.epoch = epoch;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      for (auto& p : params) p.tensor.zero_grad();
      const std::size_t lo = b * d.batch_size, hi = std::min(lo + d.batch_size, order.size());
      for (std::size_t k = lo; k < hi; ++k) {
        const PreparedInput& in = train_set[order[k]];
        LossBreakdown l = sample_loss(model, in, true);
        const double obj = l.objective.item();
        if (!std::isfinite(obj)) {
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(step) + " (sample '" + in.id + "')");
        }
        l.objective.backward();
        e.loss_easy += l.easy;
        e.loss_hard += l.hard;
      }
      const double lr = learning_rate(d, step, total_steps);
      const double inv_b = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].tensor.mutable_data();
        auto v = model.velocity[i].mutable_data();
        auto g = params[i].tensor.grad();
        for (std::size_t j = 0; j < w.size(); ++j) {
          const double gj = g.empty() ? 0.0 : g[j] * inv_b;
          v[j] = d.momentum * v[j] + gj + d.weight_decay * w[j];
          w[j] -= lr * v[j];
        }
      }
    }
    const double n = static_cast<double>(train_set.size());
    e.loss_easy /= n;
    e.loss_hard /= n;
    e.loss_total = e.loss_easy + e.loss_hard;
    if (!val_set.empty() && (epoch % d.val_every == 0 || epoch == d.max_epochs)) {
      e.val_ap = evaluate_model(model, val_set);
    }
    log.epochs.push_back(e);
  }
  for (auto& p : params) p.tensor.zero_grad();
  return log;
}

// ---------------------------------------------------------------------------
// Inference

std::vector<DetectionRecord> infer(ModelState& model, const PreparedInput& in) {
  const DetectorConfig& d = model.cfg.detector;
  ForwardOutput f = forward(model, in, false);
  const std::size_t rows = f.masks.rows, cols = f.masks.cols, plane = rows * cols;
  const std::size_t k_classes = f.head.cls_prob.dim(0);
  auto prob = f.head.cls_prob.data();
  std::vector<DetectionRecord> raw;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      std::size_t best = 0;
      for (std::size_t k = 1; k < k_classes; ++k) {
        if (prob[k * plane + i] > prob[best * plane + i]) best = k;
      }
      const double score = std::min(prob[best * plane + i], 1.0 - 1e-12);
      if (!(score > d.conf_threshold)) continue;
      const BoxEncoding enc = encoding_at(f.head.box, r, c);
      const Point p{(c + 0.5) * static_cast<double>(d.stride),
                    (r + 0.5) * static_cast<double>(d.stride)};
      ObbAnnotation o = decode_obb_prediction(enc, p, static_cast<int>(best));
      if (!(std::isfinite(o.xc) && std::isfinite(o.yc) && o.w > 1e-6 && o.h > 1e-6 &&
            std::isfinite(o.theta))) {
        continue;
      }
      raw.push_back({o, score});
    }
  }
  return nms(std::move(raw), d.nms_threshold);
}

std::size_t worker_count(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) {
    n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("MUDET_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end != env && *end == '\0' && v > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
    }
  }
  return std::max<std::size_t>(1, n);
}

std::vector<std::vector<DetectionRecord>> infer_all(ModelState& model,
                                                    const std::vector<PreparedInput>& inputs,
                                                    std::size_t threads) {
  std::vector<std::vector<DetectionRecord>> out(inputs.size());
  const std::size_t n = std::min(worker_count(threads), std::max<std::size_t>(1, inputs.size()));
  if (n <= 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = infer(model, inputs[i]);
    return out;
  }
  // Workers share the model read-only; forward in inference mode never
  // touches parameters or running statistics.
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(n);
  for (std::size_t w = 0; w < n; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < inputs.size(); i += n) out[i] = infer(model, inputs[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

double evaluate_model(ModelState& model, const std::vector<PreparedInput>& inputs) {
  std::vector<std::vector<ObbAnnotation>> gts;
  for (const auto& in : inputs) gts.push_back(in.annotations);
  return evaluate(infer_all(model, inputs), gts, 0.5).ap;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> run_ablation(const std::vector<SceneSample>& train_set,
                                      const std::vector<SceneSample>& test_set,
                                      const ModelConfig& cfg,
                                      const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (Modality m : {Modality::rgb_only, Modality::h_only, Modality::multimodal}) {
      ModelConfig c = cfg;
      c.detector.modality = m;
      c.detector.seed = seed;
      std::vector<PreparedInput> tr, te;
      for (const auto& s : train_set) tr.push_back(prepare_input(s, c));
      for (const auto& s : test_set) te.push_back(prepare_input(s, c));
      const auto t0 = std::chrono::steady_clock::now();
      ModelState model = ModelState::init(c);
      TrainLog log = train(model, tr, {});
      AblationRow row;
      row.modality = m;
      row.seed = seed;
      row.ap = evaluate_model(model, te);
      row.first_loss = log.epochs.front().loss_total;
      row.final_loss = log.epochs.back().loss_total;
      row.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back(row);
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "modality,seed,ap50,first_loss,final_loss,seconds\n";
  char buf[192];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%.6f,%.6f,%.1f\n",
                  modality_name(r.modality).c_str(), static_cast<unsigned long long>(r.seed), r.ap,
                  r.first_loss, r.final_loss, r.seconds);
    out += buf;
  }
  return out;
}

}  // namespace mudet
