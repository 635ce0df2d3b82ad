// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mudet/error.hpp"

namespace mudet {

namespace fs = std::filesystem;

RgbImage RgbImage::filled(std::size_t width, std::size_t height, std::uint8_t r, std::uint8_t g,
                          std::uint8_t b) {
  RgbImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(width * height * 3);
  for (std::size_t i = 0; i < width * height; ++i) {
    img.pixels[3 * i] = r;
    img.pixels[3 * i + 1] = g;
    img.pixels[3 * i + 2] = b;
  }
  return img;
}

std::uint16_t HeightMap::encode(double meters) const {
  const double code = std::round((meters - offset) / scale);
  return static_cast<std::uint16_t>(std::clamp(code, 0.0, 65535.0));
}

Tensor rgb_to_tensor(const RgbImage& img) {
  const std::size_t plane = img.width * img.height;
  std::vector<double> v(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) v[c * plane + i] = img.pixels[3 * i + c] / 255.0;
  }
  return Tensor::from({3, img.height, img.width}, std::move(v));
}

Tensor height_to_tensor(const HeightMap& hmap) {
  std::vector<double> v(hmap.codes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = hmap.offset + hmap.scale * hmap.codes[i];
  return Tensor::from({1, hmap.height, hmap.width}, std::move(v));
}

// ---------------------------------------------------------------------------
// Netpbm

namespace {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& bytes, const char* expected_magic) {
  PnmHeader h;
  std::size_t pos = 0;
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&]() {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw ParseError("truncated image header");
    return bytes.substr(start, pos - start);
  };
  auto number = [&]() {
    std::string t = token();
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) {
      throw ParseError("bad number '" + t + "' in image header");
    }
    return v;
  };
  h.magic = token();
  if (h.magic != expected_magic) {
    throw ParseError("expected " + std::string(expected_magic) + " image, found '" + h.magic +
                     "'");
  }
  h.width = number();
  h.height = number();
  h.maxval = number();
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("missing whitespace after image header");
  }
  h.data_offset = pos + 1;
  if (h.width == 0 || h.height == 0) throw ParseError("image has zero extent");
  return h;
}

}  // namespace

std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

RgbImage decode_ppm(const std::string& bytes) {
  PnmHeader h = parse_pnm_header(bytes, "P6");
  if (h.maxval != 255) throw ParseError("only 8-bit PPM is supported");
  const std::size_t n = h.width * h.height * 3;
  if (bytes.size() - h.data_offset != n) {
    throw ParseError("PPM payload is " + std::to_string(bytes.size() - h.data_offset) +
                     " bytes, expected " + std::to_string(n));
  }
  RgbImage img;
  img.width = h.width;
  img.height = h.height;
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end());
  return img;
}

std::string encode_pgm16(const HeightMap& hmap) {
  std::string out = "P5\n" + std::to_string(hmap.width) + " " + std::to_string(hmap.height) +
                    "\n65535\n";
  out.reserve(out.size() + 2 * hmap.codes.size());
  for (std::uint16_t c : hmap.codes) {
    out.push_back(static_cast<char>(c >> 8));
    out.push_back(static_cast<char>(c & 0xff));
  }
  return out;
}

HeightMap decode_pgm16(const std::string& bytes) {
  PnmHeader h = parse_pnm_header(bytes, "P5");
  if (h.maxval != 65535) throw ParseError("height maps must be 16-bit PGM (maxval 65535)");
  const std::size_t n = h.width * h.height;
  if (bytes.size() - h.data_offset != 2 * n) {
    throw ParseError("PGM payload is " + std::to_string(bytes.size() - h.data_offset) +
                     " bytes, expected " + std::to_string(2 * n));
  }
  HeightMap m;
  m.width = h.width;
  m.height = h.height;
  m.codes.resize(n);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (std::size_t i = 0; i < n; ++i) {
    m.codes[i] = static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Text formats

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, p);
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

std::string strip_comment(const std::string& line) {
  auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

double parse_double(const std::string& t, std::size_t line) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) {
    throw ParseError("bad number '" + t + "'", line);
  }
  return v;
}

int parse_int(const std::string& t, std::size_t line) {
  int v = 0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size()) {
    throw ParseError("bad integer '" + t + "'", line);
  }
  return v;
}

template <class F>
void for_each_line(const std::string& text, F f) {
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto tokens = split_ws(strip_comment(line));
    if (!tokens.empty()) f(tokens, n);
  }
}

ObbAnnotation parse_box(const std::vector<std::string>& t, std::size_t line) {
  ObbAnnotation a;
  a.class_id = parse_int(t[0], line);
  a.xc = parse_double(t[1], line);
  a.yc = parse_double(t[2], line);
  a.w = parse_double(t[3], line);
  a.h = parse_double(t[4], line);
  a.theta = parse_double(t[5], line);
  if (!(a.w > 0 && a.h > 0)) throw ParseError("box sides must be positive", line);
  return a;
}

}  // namespace

std::string format_annotation(const ObbAnnotation& a) {
  return std::to_string(a.class_id) + " " + format_number(a.xc) + " " + format_number(a.yc) +
         " " + format_number(a.w) + " " + format_number(a.h) + " " + format_number(a.theta);
}

std::string format_annotations(const std::vector<ObbAnnotation>& anns) {
  std::string out = "# class_id xc yc w h theta_deg\n";
  for (const auto& a : anns) out += format_annotation(a) + "\n";
  return out;
}

std::vector<ObbAnnotation> parse_annotations(const std::string& text) {
  std::vector<ObbAnnotation> out;
  for_each_line(text, [&](const std::vector<std::string>& t, std::size_t line) {
    if (t.size() != 6) {
      throw ParseError("expected 6 fields 'class_id xc yc w h theta', got " +
                           std::to_string(t.size()),
                       line);
    }
    out.push_back(parse_box(t, line));
  });
  return out;
}

std::string format_detections(const std::vector<DetectionRecord>& dets) {
  std::string out = "# class_id xc yc w h theta_deg score\n";
  for (const auto& d : dets) out += format_annotation(d.obb) + " " + format_number(d.score) + "\n";
  return out;
}

std::vector<DetectionRecord> parse_detections(const std::string& text) {
  std::vector<DetectionRecord> out;
  for_each_line(text, [&](const std::vector<std::string>& t, std::size_t line) {
    if (t.size() != 7) {
      throw ParseError("expected 7 fields 'class_id xc yc w h theta score', got " +
                           std::to_string(t.size()),
                       line);
    }
    DetectionRecord d;
    d.obb = parse_box(t, line);
    d.score = parse_double(t[6], line);
    if (!(d.score > 0.0 && d.score < 1.0)) throw ParseError("score outside (0, 1)", line);
    out.push_back(d);
  });
  return out;
}

std::string encode_height_meta(const HeightMap& hmap) {
  return "scale " + format_number(hmap.scale) + "\noffset " + format_number(hmap.offset) + "\n";
}

void decode_height_meta(const std::string& text, HeightMap& hmap) {
  bool has_scale = false, has_offset = false;
  for_each_line(text, [&](const std::vector<std::string>& t, std::size_t line) {
    if (t.size() != 2) throw ParseError("expected 'key value'", line);
    if (t[0] == "scale") {
      hmap.scale = parse_double(t[1], line);
      has_scale = true;
    } else if (t[0] == "offset") {
      hmap.offset = parse_double(t[1], line);
      has_offset = true;
    } else {
      throw ParseError("unknown height metadata key '" + t[0] + "'", line);
    }
  });
  if (!has_scale || !has_offset) throw ParseError("height metadata needs scale and offset");
  if (!(hmap.scale > 0)) throw ParseError("height scale must be positive");
}

const std::string& ManifestRecord::get(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) throw ParseError("manifest record '" + kind + "' lacks '" + key + "'");
  return it->second;
}

std::string format_manifest(const std::vector<ManifestRecord>& records) {
  std::string out = "# mudet manifest v1\n";
  for (const auto& r : records) {
    out += r.kind;
    for (const auto& [k, v] : r.fields) out += " " + k + "=" + v;
    out += "\n";
  }
  return out;
}

std::vector<ManifestRecord> parse_manifest(const std::string& text) {
  std::vector<ManifestRecord> out;
  for_each_line(text, [&](const std::vector<std::string>& t, std::size_t line) {
    ManifestRecord r;
    r.kind = t[0];
    for (std::size_t i = 1; i < t.size(); ++i) {
      auto eq = t[i].find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ParseError("manifest field '" + t[i] + "' is not key=value", line);
      }
      if (!r.fields.emplace(t[i].substr(0, eq), t[i].substr(eq + 1)).second) {
        throw ParseError("duplicate manifest key '" + t[i].substr(0, eq) + "'", line);
      }
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Scenes

ScenePaths ScenePaths::in(const fs::path& root, const std::string& id) {
  return {root / "images" / (id + ".ppm"), root / "heights" / (id + ".pgm"),
          root / "heights" / (id + ".meta"), root / "labels" / (id + ".txt")};
}

SceneSample read_scene(const ScenePaths& paths, const std::string& id) {
  SceneSample s;
  s.id = id;
  s.rgb = decode_ppm(read_file(paths.image));
  s.hmap = decode_pgm16(read_file(paths.height));
  decode_height_meta(read_file(paths.meta), s.hmap);
  if (s.rgb.width != s.hmap.width || s.rgb.height != s.hmap.height) {
    throw ParseError("scene '" + id + "': RGB is " + std::to_string(s.rgb.width) + "x" +
                     std::to_string(s.rgb.height) + " but height map is " +
                     std::to_string(s.hmap.width) + "x" + std::to_string(s.hmap.height));
  }
  s.annotations = parse_annotations(read_file(paths.labels));
  return s;
}

SceneSample read_scene(const fs::path& root, const std::string& id) {
  return read_scene(ScenePaths::in(root, id), id);
}

SceneSample read_scene_rgb_only(const fs::path& root, const std::string& id) {
  const ScenePaths p = ScenePaths::in(root, id);
  SceneSample s;
  s.id = id;
  s.rgb = decode_ppm(read_file(p.image));
  s.annotations = parse_annotations(read_file(p.labels));
  return s;
}

void write_scene(const SceneSample& s, const fs::path& root) {
  if (s.rgb.width != s.hmap.width || s.rgb.height != s.hmap.height) {
    throw ValidationError("scene '" + s.id + "': RGB and height extents differ");
  }
  const ScenePaths p = ScenePaths::in(root, s.id);
  write_file(p.image, encode_ppm(s.rgb));
  write_file(p.height, encode_pgm16(s.hmap));
  write_file(p.meta, encode_height_meta(s.hmap));
  write_file(p.labels, format_annotations(s.annotations));
}

std::vector<std::string> dataset_ids(const fs::path& root) {
  std::vector<std::string> ids;
  for (const auto& r : parse_manifest(read_file(root / "manifest.txt"))) {
    if (r.kind == "scene" || r.kind == "tile") ids.push_back(r.get("id"));
  }
  return ids;
}

std::vector<SceneSample> read_dataset(const fs::path& root, bool with_height) {
  std::vector<SceneSample> out;
  for (const auto& id : dataset_ids(root)) {
    out.push_back(with_height ? read_scene(root, id) : read_scene_rgb_only(root, id));
  }
  return out;
}

void write_dataset(const std::vector<SceneSample>& samples, const fs::path& root,
                   const std::vector<ManifestRecord>& extra_records) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "heights");
  fs::create_directories(root / "labels");
  std::vector<ManifestRecord> records{
      {"dataset", {{"count", std::to_string(samples.size())}}}};
  bool has_ids = std::any_of(extra_records.begin(), extra_records.end(), [](const auto& r) {
    return r.kind == "scene" || r.kind == "tile";
  });
  for (const auto& s : samples) {
    write_scene(s, root);
    if (!has_ids) {
      records.push_back({"scene",
                         {{"id", s.id},
                          {"width", std::to_string(s.rgb.width)},
                          {"height", std::to_string(s.rgb.height)}}});
    }
  }
  records.insert(records.end(), extra_records.begin(), extra_records.end());
  write_file(root / "manifest.txt", format_manifest(records));
}

// ---------------------------------------------------------------------------
// Tiling

void TileSpec::validate() const {
  if (tile_size == 0 || overlap == 0 || overlap >= tile_size) {
    throw ValidationError("tiling needs 0 < overlap < tile_size, got overlap " +
                          std::to_string(overlap) + " and tile " + std::to_string(tile_size));
  }
  if (!(min_visible_fraction >= 0.0 && min_visible_fraction <= 1.0)) {
    throw ValidationError("min_visible_fraction must lie in [0, 1]");
  }
}

std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, std::size_t overlap) {
  if (tile > extent) {
    throw ValidationError("tile size " + std::to_string(tile) + " exceeds scene extent " +
                          std::to_string(extent));
  }
  if (overlap >= tile) throw ValidationError("overlap must be smaller than the tile");
  const std::size_t stride = tile - overlap;
  std::vector<std::size_t> out;
  for (std::size_t o = 0;; o += stride) {
    if (o + tile >= extent) {
      out.push_back(extent - tile);
      break;
    }
    out.push_back(o);
  }
  return out;
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::optional<ObbAnnotation> cut_to_tile(const ObbAnnotation& a, double x0, double y0,
                                         double size, double min_fraction) {
  const ObbAnnotation frame{0, x0 + size / 2.0, y0 + size / 2.0, size, size, 0.0};
  const Hbb hbb = obb_to_hbb(a);
  ObbAnnotation out = a;
  if (hbb.x_min >= x0 && hbb.y_min >= y0 && hbb.x_max <= x0 + size && hbb.y_max <= y0 + size) {
    out.xc -= x0;
    out.yc -= y0;
    return out;
  }
  const auto poly = polygon_intersection(a, frame);
  if (poly.empty()) return std::nullopt;
  if (polygon_area(poly) < min_fraction * a.area()) return std::nullopt;
  // Bounding rectangle of the visible part along the box's own axes.
  const double c = std::cos(a.theta * kDeg), s = std::sin(a.theta * kDeg);
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  for (const Point& p : poly) {
    const double dx = p.x - a.xc, dy = p.y - a.yc;
    const double u = dx * c + dy * s, v = -dx * s + dy * c;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  const double um = (umin + umax) / 2.0, vm = (vmin + vmax) / 2.0;
  out.w = umax - umin;
  out.h = vmax - vmin;
  out.xc = a.xc + um * c - vm * s - x0;
  out.yc = a.yc + um * s + vm * c - y0;
  if (!(out.w > 0 && out.h > 0)) return std::nullopt;
  if (out.xc < 0 || out.yc < 0 || out.xc >= size || out.yc >= size) return std::nullopt;
  return out;
}

}  // namespace

TilingResult tile_scene(const SceneSample& sample, const TileSpec& spec) {
  spec.validate();
  const std::size_t t = spec.tile_size;
  const auto xs = tile_origins(sample.rgb.width, t, spec.overlap);
  const auto ys = tile_origins(sample.rgb.height, t, spec.overlap);
  const bool has_height = sample.hmap.width == sample.rgb.width && !sample.hmap.codes.empty();
  TilingResult out;
  for (std::size_t r = 0; r < ys.size(); ++r) {
    for (std::size_t c = 0; c < xs.size(); ++c) {
      const std::size_t x0 = xs[c], y0 = ys[r];
      SceneSample tile;
      char suffix[32];
      std::snprintf(suffix, sizeof(suffix), "_r%02zu_c%02zu", r, c);
      tile.id = sample.id + suffix;
      tile.rgb.width = tile.rgb.height = t;
      tile.rgb.pixels.resize(t * t * 3);
      tile.hmap.width = tile.hmap.height = t;
      tile.hmap.scale = sample.hmap.scale;
      tile.hmap.offset = sample.hmap.offset;
      tile.hmap.codes.resize(t * t);
      for (std::size_t y = 0; y < t; ++y) {
        std::copy_n(sample.rgb.at(x0, y0 + y), 3 * t, tile.rgb.at(0, y));
        if (has_height) {
          std::copy_n(&sample.hmap.codes[(y0 + y) * sample.hmap.width + x0], t,
                      &tile.hmap.codes[y * t]);
        }
      }
      for (const auto& a : sample.annotations) {
        if (auto cut = cut_to_tile(a, static_cast<double>(x0), static_cast<double>(y0),
                                   static_cast<double>(t), spec.min_visible_fraction)) {
          tile.annotations.push_back(*cut);
        }
      }
      out.manifest.push_back({tile.id, sample.id, x0, y0, t});
      out.tiles.push_back(std::move(tile));
    }
  }
  return out;
}

ObbAnnotation tile_to_scene(const ObbAnnotation& a, const TileRecord& tile) {
  ObbAnnotation out = a;
  out.xc += static_cast<double>(tile.x);
  out.yc += static_cast<double>(tile.y);
  return out;
}

std::vector<ManifestRecord> tile_manifest_records(const std::vector<TileRecord>& tiles) {
  std::vector<ManifestRecord> out;
  for (const auto& t : tiles) {
    out.push_back({"tile",
                   {{"id", t.id},
                    {"source", t.source},
                    {"x", std::to_string(t.x)},
                    {"y", std::to_string(t.y)},
                    {"size", std::to_string(t.size)}}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

DatasetStats dataset_stats(const std::vector<std::vector<ObbAnnotation>>& labels, double area_bin) {
  if (!(area_bin > 0)) throw ValidationError("area bin must be positive");
  DatasetStats s;
  s.area_bin = area_bin;
  s.scenes = labels.size();
  for (const auto& anns : labels) {
    s.instances += anns.size();
    s.max_density = std::max(s.max_density, anns.size());
    for (const auto& a : anns) {
      ++s.per_class[a.class_id];
      auto bin = static_cast<long long>(std::floor(a.area() / area_bin) * area_bin);
      ++s.area_histogram[bin];
    }
  }
  s.mean_density = s.scenes ? static_cast<double>(s.instances) / s.scenes : 0.0;
  return s;
}

DatasetStats dataset_stats(const std::vector<SceneSample>& samples, double area_bin) {
  std::vector<std::vector<ObbAnnotation>> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.annotations);
  return dataset_stats(labels, area_bin);
}

std::string stats_csv(const DatasetStats& s) {
  std::string out = "metric,value\n";
  out += "scenes," + std::to_string(s.scenes) + "\n";
  out += "instances," + std::to_string(s.instances) + "\n";
  for (const auto& [cls, n] : s.per_class) {
    out += "class_" + std::to_string(cls) + "," + std::to_string(n) + "\n";
  }
  out += "mean_density," + format_number(s.mean_density) + "\n";
  out += "max_density," + std::to_string(s.max_density) + "\n";
  return out;
}

std::string area_histogram_csv(const DatasetStats& s) {
  std::string out = "area_bin,count\n";
  for (const auto& [bin, n] : s.area_histogram) {
    out += std::to_string(bin) + "," + std::to_string(n) + "\n";
  }
  return out;
}

}  // namespace mudet
