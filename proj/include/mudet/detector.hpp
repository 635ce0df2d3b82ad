// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Toy dual-stream oriented-vehicle detector: two small conv backbones, cross
// attention plus hard/easy fusion, a single stride-4 head, SGD training and
// confidence-filtered NMS inference.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mudet/dataio.hpp"
#include "mudet/enhance.hpp"
#include "mudet/fusion.hpp"
#include "mudet/losses.hpp"
#include "mudet/nn.hpp"

namespace mudet {

enum class Modality { rgb_only, h_only, multimodal };

std::string modality_name(Modality m);
Modality parse_modality(const std::string& name);

struct FusionConfig {
  double theta = 0.2;
  std::size_t attn_channels = 8;
  void validate() const;
};

struct DetectorConfig {
  std::vector<std::size_t> rgb_blocks{8, 16, 16, 32, 32, 32};
  std::vector<std::size_t> h_blocks{4, 8, 16, 32};
  /// Output stride of both backbones; the first log2(stride) blocks of each
  /// stream downsample by 2.
  std::size_t stride = 4;
  std::size_t num_classes = 1;
  std::size_t head_channels = 32;
  double lr_initial = 1.5e-4;
  double lr_final = 1e-6;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t max_epochs = 30;
  std::size_t batch_size = 4;
  double conf_threshold = 0.2;
  double nms_threshold = 0.45;
  /// Prior probability used to initialise the classification bias.
  double cls_prior = 0.01;
  /// Validation AP is computed every `val_every` epochs and after the last.
  std::size_t val_every = 1;
  std::uint64_t seed = 0;
  Modality modality = Modality::multimodal;
  void validate() const;
};

struct ModelConfig {
  DetectorConfig detector;
  UniEnhConfig uni_enh;
  FusionConfig fusion;
  LossConfig loss;
  void validate() const;
};

struct ModelState {
  ModelConfig cfg;
  std::vector<ConvBlockParams> rgb_stream;
  std::vector<ConvBlockParams> h_stream;
  CrossAttentionParams attention;
  ConvBlockParams conf_rgb;
  ConvBlockParams conf_h;
  ConvBlockParams head_stem;
  ConvBlockParams head_cls;
  ConvBlockParams head_box;
  /// Momentum buffers, aligned with parameters().
  std::vector<Tensor> velocity;

  static ModelState init(const ModelConfig& cfg);

  bool uses_rgb() const { return cfg.detector.modality != Modality::h_only; }
  bool uses_height() const { return cfg.detector.modality != Modality::rgb_only; }

  std::vector<NamedTensor> parameters();
  std::vector<NamedTensor> buffers();
  /// Parameters, buffers and a one-element "meta.modality" record.
  std::vector<NamedTensor> state();
};

void save_model(ModelState& model, const std::filesystem::path& path);
/// Loads into a model built from `cfg`; the stored modality must match.
ModelState load_model(const ModelConfig& cfg, const std::filesystem::path& path);

/// Network inputs for one scene. Tensors of unused streams stay empty and the
/// corresponding files are never read.
struct PreparedInput {
  std::string id;
  Tensor rgb;  // (3 + k, H, W) enhanced
  Tensor h;    // (1, H, W) sliced
  std::vector<ObbAnnotation> annotations;
  std::size_t width = 0;
  std::size_t height = 0;
};

PreparedInput prepare_input(const SceneSample& sample, const ModelConfig& cfg);

struct ForwardOutput {
  HeadPrediction head;
  bool has_conf = false;
  ConfidencePair conf;
  MaskTriple masks;
  Tensor fused;
};

/// Throws ConfigError when the input size is not divisible by the stride.
ForwardOutput forward(ModelState& model, const PreparedInput& in, bool training = false);

struct LossBreakdown {
  Tensor objective;  // easy + hard + confidence supervision
  double easy = 0.0;
  double hard = 0.0;
  double confidence = 0.0;
  double total() const { return easy + hard; }
};

LossBreakdown sample_loss(ModelState& model, const PreparedInput& in, bool training = true);

struct EpochLog {
  std::size_t epoch = 0;
  double loss_easy = 0.0;
  double loss_hard = 0.0;
  double loss_total = 0.0;
  double val_ap = -1.0;  // negative when not evaluated
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::string csv() const;
};

double learning_rate(const DetectorConfig& cfg, std::size_t step, std::size_t total_steps);

/// SGD with momentum and L2 weight decay; cosine learning-rate decay
/// per step. `val` may be empty. Throws NumericalError on a non-finite loss.
TrainLog train(ModelState& model, const std::vector<PreparedInput>& train_set,
               const std::vector<PreparedInput>& val_set);

/// Detections with score > conf_threshold after NMS, in tile coordinates.
std::vector<DetectionRecord> infer(ModelState& model, const PreparedInput& in);

/// Runs infer over many inputs with up to `threads` workers (0: MUDET_THREADS
/// or the hardware count); results come back in input order.
std::vector<std::vector<DetectionRecord>> infer_all(ModelState& model,
                                                    const std::vector<PreparedInput>& inputs,
                                                    std::size_t threads = 0);

std::size_t worker_count(std::size_t requested = 0);

/// AP at IoU 0.5 of the model on `inputs`.
double evaluate_model(ModelState& model, const std::vector<PreparedInput>& inputs);

struct AblationRow {
  Modality modality = Modality::multimodal;
  std::uint64_t seed = 0;
  double ap = 0.0;
  double first_loss = 0.0;  // mean training loss of epoch 1
  double final_loss = 0.0;
  double seconds = 0.0;
};

/// Trains one model per (seed, modality) under identical settings and reports
/// test AP for each.
std::vector<AblationRow> run_ablation(const std::vector<SceneSample>& train_set,
                                      const std::vector<SceneSample>& test_set,
                                      const ModelConfig& cfg,
                                      const std::vector<std::uint64_t>& seeds);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace mudet
