// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Run configuration: one JSON document holding every module's settings.
// Unknown keys are rejected; "a.b=value" overrides are applied on top.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mudet/dataio.hpp"
#include "mudet/detector.hpp"

namespace mudet {

struct EvalConfig {
  double iou_threshold = 0.5;
  bool interpolate = false;
};

struct RunConfig {
  UniEnhConfig uni_enh;
  FusionConfig fusion;
  LossConfig loss;
  DetectorConfig detector;
  TileSpec tile;
  SynthConfig synth;
  EvalConfig eval;

  ModelConfig model() const { return {detector, uni_enh, fusion, loss}; }
  void validate() const;
};

/// Pretty-printed JSON with every key.
std::string config_to_json(const RunConfig& cfg);
/// Keys missing from `text` keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// "section.key=value"; the value is read as JSON, falling back to a string.
void apply_override(RunConfig& cfg, const std::string& assignment);
RunConfig resolve_config(const std::filesystem::path& path, const std::vector<std::string>& sets);

}  // namespace mudet
