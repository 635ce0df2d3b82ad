// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset plumbing.
//
// Layout under a dataset root:
//   images/<id>.ppm    binary P6, 8-bit RGB
//   heights/<id>.pgm   binary P5, 16-bit big-endian raw height codes
//   heights/<id>.meta  "scale <v>" and "offset <v>" lines; height = offset + scale * code
//   labels/<id>.txt    one "class_id xc yc w h theta_deg" per line, '#' comments
//   manifest.txt       one record per line: "<kind> key=value ..."
//
// All parsers reject trailing garbage.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mudet/obb.hpp"
#include "mudet/tensor.hpp"

namespace mudet {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  static RgbImage filled(std::size_t width, std::size_t height, std::uint8_t r, std::uint8_t g,
                         std::uint8_t b);
  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return &pixels[(y * width + x) * 3];
  }
  bool operator==(const RgbImage&) const = default;
};

struct HeightMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> codes;  // row-major
  double scale = 0.01;
  double offset = 0.0;

  double value(std::size_t x, std::size_t y) const {
    return offset + scale * codes[y * width + x];
  }
  std::uint16_t encode(double meters) const;
  bool operator==(const HeightMap&) const = default;
};

struct SceneSample {
  std::string id;
  RgbImage rgb;
  HeightMap hmap;
  std::vector<ObbAnnotation> annotations;
};

/// (3, H, W) in [0, 1].
Tensor rgb_to_tensor(const RgbImage& img);
/// (1, H, W) in height units.
Tensor height_to_tensor(const HeightMap& hmap);

// Formats ------------------------------------------------------------------

std::string encode_ppm(const RgbImage& img);
RgbImage decode_ppm(const std::string& bytes);
std::string encode_pgm16(const HeightMap& hmap);
/// Codes and extents only; scale/offset come from the sidecar.
HeightMap decode_pgm16(const std::string& bytes);
std::string encode_height_meta(const HeightMap& hmap);
void decode_height_meta(const std::string& text, HeightMap& hmap);

std::string format_number(double v);
std::string format_annotation(const ObbAnnotation& a);
std::string format_annotations(const std::vector<ObbAnnotation>& anns);
std::vector<ObbAnnotation> parse_annotations(const std::string& text);
std::string format_detections(const std::vector<DetectionRecord>& dets);
std::vector<DetectionRecord> parse_detections(const std::string& text);

struct ManifestRecord {
  std::string kind;
  std::map<std::string, std::string> fields;
  const std::string& get(const std::string& key) const;
};
std::string format_manifest(const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> parse_manifest(const std::string& text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// Scenes and datasets --------------------------------------------------------

struct ScenePaths {
  std::filesystem::path image;
  std::filesystem::path height;
  std::filesystem::path meta;
  std::filesystem::path labels;
  static ScenePaths in(const std::filesystem::path& root, const std::string& id);
};

/// Throws IoError/ParseError; a rgb/height extent mismatch is a ParseError.
SceneSample read_scene(const ScenePaths& paths, const std::string& id);
SceneSample read_scene(const std::filesystem::path& root, const std::string& id);
/// Annotations and the RGB image only; never touches height files.
SceneSample read_scene_rgb_only(const std::filesystem::path& root, const std::string& id);
void write_scene(const SceneSample& sample, const std::filesystem::path& root);

std::vector<std::string> dataset_ids(const std::filesystem::path& root);
std::vector<SceneSample> read_dataset(const std::filesystem::path& root, bool with_height = true);
/// Writes every scene plus a manifest with one "scene" record each.
void write_dataset(const std::vector<SceneSample>& samples, const std::filesystem::path& root,
                   const std::vector<ManifestRecord>& extra_records = {});

// Tiling ---------------------------------------------------------------------

struct TileSpec {
  std::size_t tile_size = 128;
  std::size_t overlap = 32;
  double min_visible_fraction = 0.4;
  void validate() const;
};

struct TileRecord {
  std::string id;
  std::string source;
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t size = 0;
};

struct TilingResult {
  std::vector<SceneSample> tiles;
  std::vector<TileRecord> manifest;
};

/// Origins k * (tile - overlap) along one axis; the last tile is clamped so it
/// ends at the border.
std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, std::size_t overlap);

/// Cuts a scene into overlapping square tiles. Boxes partially outside a tile
/// are cut along their own axes and kept when at least min_visible_fraction of
/// their area remains and the new center lies inside the tile.
TilingResult tile_scene(const SceneSample& sample, const TileSpec& spec);

ObbAnnotation tile_to_scene(const ObbAnnotation& a, const TileRecord& tile);
std::vector<ManifestRecord> tile_manifest_records(const std::vector<TileRecord>& tiles);

// Statistics -----------------------------------------------------------------

struct DatasetStats {
  std::size_t scenes = 0;
  std::size_t instances = 0;
  std::map<int, std::size_t> per_class;
  /// Lower bin edge (px^2) -> count.
  std::map<long long, std::size_t> area_histogram;
  double area_bin = 10.0;
  double mean_density = 0.0;  // instances per scene
  std::size_t max_density = 0;
};

DatasetStats dataset_stats(const std::vector<SceneSample>& samples, double area_bin = 10.0);
DatasetStats dataset_stats(const std::vector<std::vector<ObbAnnotation>>& labels,
                           double area_bin = 10.0);
std::string stats_csv(const DatasetStats& s);
std::string area_histogram_csv(const DatasetStats& s);

// Synthetic scenes -------------------------------------------------------------

struct SynthConfig {
  std::size_t width = 128;
  std::size_t height = 128;
  std::size_t scenes = 1;
  std::size_t min_vehicles = 6;
  std::size_t max_vehicles = 14;
  double vehicle_length_min = 14.0;
  double vehicle_length_max = 22.0;
  double vehicle_width_min = 7.0;
  double vehicle_width_max = 10.0;
  /// 0 scatters vehicles over the canvas, 1 packs them around few centers.
  double cluster_tightness = 0.6;
  /// Chance that a vehicle receives an attached occluder (branch over it or
  /// tent beside it); also scales the number of free-standing distractors.
  double occluder_prob = 0.5;
  double vehicle_height_min = 1.4;
  double vehicle_height_max = 2.8;
  double tent_height_min = 1.4;
  double tent_height_max = 2.8;
  /// Branch canopy heights, below the vehicle band.
  double occluder_height_min = 0.1;
  double occluder_height_max = 0.45;
  double height_noise = 0.12;
  double height_scale = 0.01;
  std::uint64_t seed = 0;
  std::string id_prefix = "scene";
  void validate() const;
};

struct SynthSceneInfo {
  std::string id;
  std::size_t requested_vehicles = 0;
  std::size_t vehicles = 0;
  std::size_t rgb_occluded = 0;  // vehicles with > 50% of area under a branch
  std::size_t tents = 0;
  std::size_t branches = 0;
  std::vector<bool> vehicle_rgb_occluded;
};

struct SynthDataset {
  std::vector<SceneSample> samples;
  std::vector<SynthSceneInfo> info;
};

SynthDataset synth_generate(const SynthConfig& cfg);
std::vector<ManifestRecord> synth_manifest_records(const SynthDataset& ds);

}  // namespace mudet
