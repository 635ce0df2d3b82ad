// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/config.hpp"

#include <json.hpp>

#include "mudet/error.hpp"

namespace mudet {

using nlohmann::json;

void RunConfig::validate() const {
  model().validate();
  tile.validate();
  synth.validate();
  if (!(eval.iou_threshold > 0 && eval.iou_threshold <= 1)) {
    throw ConfigError("eval.iou_threshold must lie in (0, 1]");
  }
}

namespace {

json to_json(const RunConfig& c) {
  const auto& s = c.uni_enh.slice;
  const auto& d = c.detector;
  const auto& y = c.synth;
  return json{
      {"uni_enh",
       {{"A", c.uni_enh.A},
        {"gamma_coeffs", c.uni_enh.gamma_coeffs},
        {"slice",
         {{"h1", s.h1}, {"h2", s.h2}, {"i0", s.i0}, {"i1", s.i1}, {"cmin", s.c_min},
          {"cmax", s.c_max}}}}},
      {"fusion", {{"theta", c.fusion.theta}, {"attn_channels", c.fusion.attn_channels}}},
      {"loss", {{"focal_gamma", c.loss.focal_gamma}, {"theta", c.loss.theta}}},
      {"detector",
       {{"rgb_blocks", d.rgb_blocks},
        {"h_blocks", d.h_blocks},
        {"stride", d.stride},
        {"num_classes", d.num_classes},
        {"head_channels", d.head_channels},
        {"lr_initial", d.lr_initial},
        {"lr_final", d.lr_final},
        {"momentum", d.momentum},
        {"weight_decay", d.weight_decay},
        {"max_epochs", d.max_epochs},
        {"batch_size", d.batch_size},
        {"conf_threshold", d.conf_threshold},
        {"nms_threshold", d.nms_threshold},
        {"cls_prior", d.cls_prior},
        {"val_every", d.val_every},
        {"seed", d.seed},
        {"modality", modality_name(d.modality)}}},
      {"tile",
       {{"tile_size", c.tile.tile_size},
        {"overlap", c.tile.overlap},
        {"min_visible_fraction", c.tile.min_visible_fraction}}},
      {"synth",
       {{"width", y.width},
        {"height", y.height},
        {"scenes", y.scenes},
        {"min_vehicles", y.min_vehicles},
        {"max_vehicles", y.max_vehicles},
        {"vehicle_length_min", y.vehicle_length_min},
        {"vehicle_length_max", y.vehicle_length_max},
        {"vehicle_width_min", y.vehicle_width_min},
        {"vehicle_width_max", y.vehicle_width_max},
        {"cluster_tightness", y.cluster_tightness},
        {"occluder_prob", y.occluder_prob},
        {"vehicle_height_min", y.vehicle_height_min},
        {"vehicle_height_max", y.vehicle_height_max},
        {"tent_height_min", y.tent_height_min},
        {"tent_height_max", y.tent_height_max},
        {"occluder_height_min", y.occluder_height_min},
        {"occluder_height_max", y.occluder_height_max},
        {"height_noise", y.height_noise},
        {"height_scale", y.height_scale},
        {"seed", y.seed},
        {"id_prefix", y.id_prefix}}},
      {"eval", {{"iou_threshold", c.eval.iou_threshold}, {"interpolate", c.eval.interpolate}}}};
}

template <class T>
void get(const json& j, const char* key, T& out) {
  out = j.at(key).get<T>();
}

RunConfig from_json(const json& j) {
  RunConfig c;
  const json& u = j.at("uni_enh");
  get(u, "A", c.uni_enh.A);
  get(u, "gamma_coeffs", c.uni_enh.gamma_coeffs);
  const json& s = u.at("slice");
  get(s, "h1", c.uni_enh.slice.h1);
  get(s, "h2", c.uni_enh.slice.h2);
  get(s, "i0", c.uni_enh.slice.i0);
  get(s, "i1", c.uni_enh.slice.i1);
  get(s, "cmin", c.uni_enh.slice.c_min);
  get(s, "cmax", c.uni_enh.slice.c_max);
  get(j.at("fusion"), "theta", c.fusion.theta);
  get(j.at("fusion"), "attn_channels", c.fusion.attn_channels);
  get(j.at("loss"), "focal_gamma", c.loss.focal_gamma);
  get(j.at("loss"), "theta", c.loss.theta);
  const json& d = j.at("detector");
  auto& dc = c.detector;
  get(d, "rgb_blocks", dc.rgb_blocks);
  get(d, "h_blocks", dc.h_blocks);
  get(d, "stride", dc.stride);
  get(d, "num_classes", dc.num_classes);
  get(d, "head_channels", dc.head_channels);
  get(d, "lr_initial", dc.lr_initial);
  get(d, "lr_final", dc.lr_final);
  get(d, "momentum", dc.momentum);
  get(d, "weight_decay", dc.weight_decay);
  get(d, "max_epochs", dc.max_epochs);
  get(d, "batch_size", dc.batch_size);
  get(d, "conf_threshold", dc.conf_threshold);
  get(d, "nms_threshold", dc.nms_threshold);
  get(d, "cls_prior", dc.cls_prior);
  get(d, "val_every", dc.val_every);
  get(d, "seed", dc.seed);
  dc.modality = parse_modality(d.at("modality").get<std::string>());
  const json& t = j.at("tile");
  get(t, "tile_size", c.tile.tile_size);
  get(t, "overlap", c.tile.overlap);
  get(t, "min_visible_fraction", c.tile.min_visible_fraction);
  const json& y = j.at("synth");
  auto& sc = c.synth;
  get(y, "width", sc.width);
  get(y, "height", sc.height);
  get(y, "scenes", sc.scenes);
  get(y, "min_vehicles", sc.min_vehicles);
  get(y, "max_vehicles", sc.max_vehicles);
  get(y, "vehicle_length_min", sc.vehicle_length_min);
  get(y, "vehicle_length_max", sc.vehicle_length_max);
  get(y, "vehicle_width_min", sc.vehicle_width_min);
  get(y, "vehicle_width_max", sc.vehicle_width_max);
  get(y, "cluster_tightness", sc.cluster_tightness);
  get(y, "occluder_prob", sc.occluder_prob);
  get(y, "vehicle_height_min", sc.vehicle_height_min);
  get(y, "vehicle_height_max", sc.vehicle_height_max);
  get(y, "tent_height_min", sc.tent_height_min);
  get(y, "tent_height_max", sc.tent_height_max);
  get(y, "occluder_height_min", sc.occluder_height_min);
  get(y, "occluder_height_max", sc.occluder_height_max);
  get(y, "height_noise", sc.height_noise);
  get(y, "height_scale", sc.height_scale);
  get(y, "seed", sc.seed);
  get(y, "id_prefix", sc.id_prefix);
  get(j.at("eval"), "iou_threshold", c.eval.iou_threshold);
  get(j.at("eval"), "interpolate", c.eval.interpolate);
  return c;
}

bool compatible(const json& schema, const json& v) {
  if (schema.is_number()) return v.is_number();
  if (schema.is_boolean()) return v.is_boolean();
  if (schema.is_string()) return v.is_string();
  if (schema.is_array()) return v.is_array();
  return schema.type() == v.type();
}

// Recursively copies `user` into `base`, rejecting keys absent from `base`.
void merge_strict(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else if (!compatible(slot, it.value())) {
      throw ConfigError("config key '" + key + "' has the wrong type");
    } else {
      slot = it.value();
    }
  }
}

RunConfig checked(const json& j) {
  RunConfig c;
  try {
    c = from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig parse_config(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  json merged = to_json(RunConfig{});
  merge_strict(merged, user, "");
  return checked(merged);
}

RunConfig load_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

namespace {

json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json patch = json::parse(text, nullptr, false);
  if (patch.is_discarded()) patch = text;
  std::vector<std::string> parts;
  std::string rest = key;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos;) {
    parts.push_back(rest.substr(0, pos));
    rest = rest.substr(pos + 1);
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  return patch;
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& assignment) {
  json merged = to_json(cfg);
  merge_strict(merged, override_patch(assignment), "");
  cfg = checked(merged);
}

RunConfig resolve_config(const std::filesystem::path& path, const std::vector<std::string>& sets) {
  json merged = to_json(path.empty() ? RunConfig{} : load_config(path));
  for (const auto& s : sets) merge_strict(merged, override_patch(s), "");
  return checked(merged);
}

}  // namespace mudet
