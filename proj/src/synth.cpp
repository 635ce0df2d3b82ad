// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "mudet/dataio.hpp"
#include "mudet/error.hpp"

namespace mudet {

void SynthConfig::validate() const {
  auto range = [](double lo, double hi, const char* name) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw ValidationError(std::string("synth: empty range for ") + name);
    }
  };
  if (width < 32 || height < 32) throw ValidationError("synth: canvas must be at least 32x32");
  if (min_vehicles > max_vehicles) throw ValidationError("synth: min_vehicles > max_vehicles");
  range(vehicle_length_min, vehicle_length_max, "vehicle length");
  range(vehicle_width_min, vehicle_width_max, "vehicle width");
  range(vehicle_height_min, vehicle_height_max, "vehicle height");
  range(tent_height_min, tent_height_max, "tent height");
  range(occluder_height_min, occluder_height_max, "occluder height");
  if (vehicle_width_min <= 0 || vehicle_width_max > vehicle_length_min) {
    throw ValidationError("synth: vehicle widths must be positive and not exceed lengths");
  }
  if (vehicle_length_max * 1.5 > static_cast<double>(std::min(width, height))) {
    throw ValidationError("synth: vehicles too long for the canvas");
  }
  if (!(cluster_tightness >= 0 && cluster_tightness <= 1)) {
    throw ValidationError("synth: cluster_tightness must lie in [0, 1]");
  }
  if (!(occluder_prob >= 0 && occluder_prob <= 1)) {
    throw ValidationError("synth: occluder_prob must lie in [0, 1]");
  }
  if (!(height_noise >= 0) || !(height_scale > 0)) {
    throw ValidationError("synth: height_noise must be >= 0 and height_scale > 0");
  }
  if (occluder_height_min < 0) throw ValidationError("synth: heights must be non-negative");
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr std::size_t kPlacementTries = 200;
// Share of attached occluders that are branches; the rest are tents.
constexpr double kBranchShare = 0.4;
// Free-standing distractors, each present with probability occluder_prob.
constexpr int kFreeTentSlots = 8;
constexpr int kFreeBranchSlots = 4;

using Rgb = std::array<double, 3>;

constexpr std::array<Rgb, 7> kBodyColors{{{222, 222, 226},
                                          {38, 38, 44},
                                          {168, 32, 30},
                                          {40, 62, 150},
                                          {160, 164, 170},
                                          {196, 170, 60},
                                          {90, 96, 104}}};
constexpr Rgb kGround{118, 110, 94};
constexpr Rgb kFoliage{58, 104, 46};
constexpr std::array<Rgb, 2> kTentStripes{{{236, 232, 220}, {214, 110, 36}}};

struct Disc {
  double x, y, r;
};

struct Scene {
  std::size_t w, h;
  std::vector<Rgb> color;
  std::vector<double> height;
  std::vector<std::uint8_t> branch;  // 1 where foliage covers the pixel
  std::vector<int> vehicle;          // vehicle index or -1
};

// Pixel centers inside an OBB, with local coordinates (u along w, v along h).
template <class F>
void for_each_pixel(const ObbAnnotation& o, std::size_t w, std::size_t h, F f) {
  const Hbb b = obb_to_hbb(o);
  const double c = std::cos(o.theta * kDeg), s = std::sin(o.theta * kDeg);
  const auto x0 = static_cast<long>(std::max(0.0, std::floor(b.x_min)));
  const auto y0 = static_cast<long>(std::max(0.0, std::floor(b.y_min)));
  const auto x1 = static_cast<long>(std::min<double>(w - 1, std::ceil(b.x_max)));
  const auto y1 = static_cast<long>(std::min<double>(h - 1, std::ceil(b.y_max)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - o.xc, dy = y + 0.5 - o.yc;
      const double u = dx * c + dy * s, v = -dx * s + dy * c;
      if (std::abs(u) <= o.w / 2 && std::abs(v) <= o.h / 2) {
        f(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x), u / o.w + 0.5,
          v / o.h + 0.5);
      }
    }
  }
}

ObbAnnotation inflated(const ObbAnnotation& o, double margin) {
  ObbAnnotation r = o;
  r.w += 2 * margin;
  r.h += 2 * margin;
  return r;
}

bool inside_canvas(const ObbAnnotation& o, std::size_t w, std::size_t h) {
  const Hbb b = obb_to_hbb(o);
  return b.x_min >= 1 && b.y_min >= 1 && b.x_max <= static_cast<double>(w) - 1 &&
         b.y_max <= static_cast<double>(h) - 1;
}

bool collides(const ObbAnnotation& o, const std::vector<ObbAnnotation>& placed) {
  const ObbAnnotation big = inflated(o, 1.0);
  return std::any_of(placed.begin(), placed.end(), [&](const ObbAnnotation& p) {
    return polygon_intersection_area(big, p) > 0.0;
  });
}

// Slightly rounded roof across the short axis, q in [0, 1].
double roof_profile(double q) { return 1.0 - 0.35 * std::pow(2 * std::abs(q - 0.5), 4); }

double wrap_angle(double t) {
  while (t >= 90) t -= 180;
  while (t < -90) t += 180;
  return t;
}

class Generator {
 public:
  Generator(const SynthConfig& cfg, std::uint64_t scene_index)
      : cfg_(cfg) {
    std::seed_seq seq{cfg.seed, scene_index, std::uint64_t{0x6d756465}};
    rng_.seed(seq);
  }

  std::pair<SceneSample, SynthSceneInfo> run(const std::string& id) {
    Scene sc{cfg_.width, cfg_.height, {}, {}, {}, {}};
    const std::size_t n = sc.w * sc.h;
    sc.color.assign(n, kGround);
    sc.height.assign(n, 0.0);
    sc.branch.assign(n, 0);
    sc.vehicle.assign(n, -1);
    paint_ground(sc);

    SynthSceneInfo info;
    info.id = id;
    info.requested_vehicles =
        cfg_.min_vehicles + static_cast<std::size_t>(uniform(0, 1) *
                                                     (cfg_.max_vehicles - cfg_.min_vehicles + 1));
    info.requested_vehicles = std::min(info.requested_vehicles, cfg_.max_vehicles);

    std::vector<ObbAnnotation> vehicles, solids;
    std::vector<Disc> branches;
    place_vehicles(info.requested_vehicles, vehicles, solids);

    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      paint_vehicle(sc, vehicles[i], static_cast<int>(i));
    }
    // Attached occluders, then free-standing distractors.
    std::vector<ObbAnnotation> tents;
    for (const auto& v : vehicles) {
      if (uniform(0, 1) >= cfg_.occluder_prob) continue;
      if (uniform(0, 1) < kBranchShare) {
        add_branch_over(v, branches);
      } else if (auto t = tent_beside(v, solids)) {
        solids.push_back(*t);
        tents.push_back(*t);
      }
    }
    for (int k = 0; k < kFreeTentSlots; ++k) {
      if (uniform(0, 1) >= cfg_.occluder_prob) continue;
      if (auto t = free_tent(solids)) {
        solids.push_back(*t);
        tents.push_back(*t);
      }
    }
    for (int k = 0; k < kFreeBranchSlots; ++k) {
      if (uniform(0, 1) < cfg_.occluder_prob) {
        branches.push_back({uniform(0, sc.w), uniform(0, sc.h), uniform(5, 11)});
      }
    }
    for (const auto& t : tents) paint_tent(sc, t);
    paint_branches(sc, branches);

    info.vehicles = vehicles.size();
    info.tents = tents.size();
    info.branches = branches.size();
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      std::size_t total = 0, covered = 0;
      for_each_pixel(vehicles[i], sc.w, sc.h, [&](std::size_t p, double, double) {
        ++total;
        covered += sc.branch[p];
      });
      const bool occ = total > 0 && 2 * covered > total;
      info.vehicle_rgb_occluded.push_back(occ);
      info.rgb_occluded += occ;
    }

    SceneSample s;
    s.id = id;
    s.annotations = vehicles;
    s.rgb.width = sc.w;
    s.rgb.height = sc.h;
    s.rgb.pixels.resize(3 * n);
    std::normal_distribution<double> pix_noise(0.0, 6.0);
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::round(sc.color[p][c] + pix_noise(rng_));
        s.rgb.pixels[3 * p + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
    s.hmap = render_height(sc);
    return {std::move(s), std::move(info)};
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  ObbAnnotation random_vehicle(double xc, double yc, double theta) {
    ObbAnnotation o;
    o.class_id = 0;
    o.xc = xc;
    o.yc = yc;
    o.w = uniform(cfg_.vehicle_length_min, cfg_.vehicle_length_max);
    o.h = uniform(cfg_.vehicle_width_min, cfg_.vehicle_width_max);
    o.theta = wrap_angle(theta);
    return canonicalize(o);
  }

  void place_vehicles(std::size_t count, std::vector<ObbAnnotation>& vehicles,
                      std::vector<ObbAnnotation>& solids) {
    struct Cluster {
      double x, y, theta;
    };
    std::vector<Cluster> clusters;
    const int nclusters = 1 + static_cast<int>(uniform(0, 3));
    for (int k = 0; k < nclusters; ++k) {
      clusters.push_back({uniform(0.2, 0.8) * cfg_.width, uniform(0.2, 0.8) * cfg_.height,
                          uniform(-90, 90)});
    }
    const double spread = 0.35 * static_cast<double>(std::min(cfg_.width, cfg_.height)) *
                          (1.0 - 0.6 * cfg_.cluster_tightness);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t t = 0; t < kPlacementTries; ++t) {
        ObbAnnotation o;
        if (uniform(0, 1) < cfg_.cluster_tightness) {
          const Cluster& c = clusters[static_cast<std::size_t>(uniform(0, 1) * clusters.size()) %
                                      clusters.size()];
          std::normal_distribution<double> off(0.0, spread);
          std::normal_distribution<double> tilt(0.0, 8.0);
          o = random_vehicle(c.x + off(rng_), c.y + off(rng_), c.theta + tilt(rng_));
        } else {
          o = random_vehicle(uniform(0, cfg_.width), uniform(0, cfg_.height), uniform(-90, 90));
        }
        if (inside_canvas(o, cfg_.width, cfg_.height) && !collides(o, solids)) {
          vehicles.push_back(o);
          solids.push_back(o);
          break;
        }
      }
    }
  }

  void add_branch_over(const ObbAnnotation& v, std::vector<Disc>& branches) {
    // A main disc wide enough to hide most of the body, plus lobes.
    const double cx = v.xc + uniform(-2, 2), cy = v.yc + uniform(-2, 2);
    branches.push_back({cx, cy, uniform(0.5, 0.65) * v.w});
    const int lobes = 1 + static_cast<int>(uniform(0, 3));
    for (int k = 0; k < lobes; ++k) {
      const double a = uniform(0, 2 * std::numbers::pi);
      const double d = uniform(0.3, 0.7) * v.w;
      branches.push_back({cx + d * std::cos(a), cy + d * std::sin(a), uniform(3, 7)});
    }
  }

  std::optional<ObbAnnotation> tent_beside(const ObbAnnotation& v,
                                           const std::vector<ObbAnnotation>& solids) {
    for (int t = 0; t < 8; ++t) {
      const double side = uniform(0, 1) < 0.5 ? -1.0 : 1.0;
      ObbAnnotation o = random_vehicle(0, 0, v.theta + uniform(-10, 10));
      const double gap = (v.h + o.h) / 2 + uniform(1.5, 4.0);
      const double nx = -std::sin(v.theta * kDeg), ny = std::cos(v.theta * kDeg);
      const double along = uniform(-3, 3);
      o.xc = v.xc + side * gap * nx + along * std::cos(v.theta * kDeg);
      o.yc = v.yc + side * gap * ny + along * std::sin(v.theta * kDeg);
      o.class_id = -1;
      if (inside_canvas(o, cfg_.width, cfg_.height) && !collides(o, solids)) return o;
    }
    return std::nullopt;
  }

  std::optional<ObbAnnotation> free_tent(const std::vector<ObbAnnotation>& solids) {
    for (std::size_t t = 0; t < 50; ++t) {
      ObbAnnotation o =
          random_vehicle(uniform(0, cfg_.width), uniform(0, cfg_.height), uniform(-90, 90));
      o.class_id = -1;
      if (inside_canvas(o, cfg_.width, cfg_.height) && !collides(o, solids)) return o;
    }
    return std::nullopt;
  }

  void paint_ground(Scene& sc) {
    // Low-frequency patches of soil/grass tone.
    std::array<Disc, 6> patches;
    std::array<Rgb, 6> tones;
    for (std::size_t k = 0; k < patches.size(); ++k) {
      patches[k] = {uniform(0, sc.w), uniform(0, sc.h), uniform(10, 40)};
      tones[k] = {uniform(-18, 18), uniform(-14, 22), uniform(-18, 10)};
    }
    for (std::size_t y = 0; y < sc.h; ++y) {
      for (std::size_t x = 0; x < sc.w; ++x) {
        Rgb c = kGround;
        for (std::size_t k = 0; k < patches.size(); ++k) {
          const double dx = x + 0.5 - patches[k].x, dy = y + 0.5 - patches[k].y;
          const double wgt = std::exp(-(dx * dx + dy * dy) / (2 * patches[k].r * patches[k].r));
          for (int ch = 0; ch < 3; ++ch) c[ch] += wgt * tones[k][ch];
        }
        sc.color[y * sc.w + x] = c;
      }
    }
  }

  void paint_vehicle(Scene& sc, const ObbAnnotation& v, int index) {
    const Rgb body = kBodyColors[static_cast<std::size_t>(uniform(0, 1) * kBodyColors.size()) %
                                 kBodyColors.size()];
    const double top = uniform(cfg_.vehicle_height_min, cfg_.vehicle_height_max);
    const bool front_positive = uniform(0, 1) < 0.5;
    for_each_pixel(v, sc.w, sc.h, [&](std::size_t p, double u, double q) {
      const double a = front_positive ? u : 1.0 - u;
      Rgb c = body;
      const bool edge = q < 0.12 || q > 0.88 || a < 0.06 || a > 0.94;
      if (a > 0.62 && a < 0.78 && !edge) {
        c = {30, 36, 46};  // windshield
      } else if (edge) {
        for (double& ch : c) ch *= 0.7;
      }
      sc.color[p] = c;
      sc.height[p] = top * roof_profile(q);
      sc.vehicle[p] = index;
    });
  }

  void paint_tent(Scene& sc, const ObbAnnotation& t) {
    const double top = uniform(cfg_.tent_height_min, cfg_.tent_height_max);
    const double stripes = std::round(uniform(3, 6));
    for_each_pixel(t, sc.w, sc.h, [&](std::size_t p, double u, double q) {
      const auto k = static_cast<std::size_t>(std::floor(u * stripes * 2)) % 2;
      sc.color[p] = kTentStripes[k];
      // Same footprint and roof profile as a vehicle: only the RGB texture
      // tells them apart.
      sc.height[p] = top * roof_profile(q);
    });
  }

  void paint_branches(Scene& sc, const std::vector<Disc>& discs) {
    for (const Disc& d : discs) {
      const double canopy = uniform(cfg_.occluder_height_min, cfg_.occluder_height_max);
      const long x0 = std::max(0L, static_cast<long>(std::floor(d.x - d.r)));
      const long x1 = std::min(static_cast<long>(sc.w) - 1, static_cast<long>(std::ceil(d.x + d.r)));
      const long y0 = std::max(0L, static_cast<long>(std::floor(d.y - d.r)));
      const long y1 = std::min(static_cast<long>(sc.h) - 1, static_cast<long>(std::ceil(d.y + d.r)));
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
          const double dx = x + 0.5 - d.x, dy = y + 0.5 - d.y;
          if (dx * dx + dy * dy > d.r * d.r) continue;
          const std::size_t p = static_cast<std::size_t>(y) * sc.w + static_cast<std::size_t>(x);
          const double shade = 0.75 + 0.5 * ((x * 7 + y * 13) % 5) / 4.0;
          sc.color[p] = {kFoliage[0] * shade, kFoliage[1] * shade, kFoliage[2] * shade};
          sc.branch[p] = 1;
          // Foliage over bare ground is low; over vehicles the roof still dominates.
          if (sc.vehicle[p] < 0) sc.height[p] = std::max(sc.height[p], canopy);
        }
      }
    }
  }

  HeightMap render_height(const Scene& sc) {
    const std::size_t w = sc.w, h = sc.h;
    std::vector<double> blurred(w * h);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) {
              continue;
            }
            acc += sc.height[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
            ++cnt;
          }
        }
        blurred[y * w + x] = acc / cnt;
      }
    }
    HeightMap m;
    m.width = w;
    m.height = h;
    m.scale = cfg_.height_scale;
    m.offset = 0.0;
    m.codes.resize(w * h);
    std::normal_distribution<double> noise(0.0, cfg_.height_noise);
    for (std::size_t p = 0; p < w * h; ++p) {
      const double v = blurred[p] + (cfg_.height_noise > 0 ? noise(rng_) : 0.0);
      m.codes[p] = m.encode(std::max(0.0, v));
    }
    return m;
  }

  const SynthConfig& cfg_;
  std::mt19937_64 rng_;
};

}  // namespace

SynthDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthDataset ds;
  for (std::size_t i = 0; i < cfg.scenes; ++i) {
    char id[96];
    std::snprintf(id, sizeof(id), "%s_%04zu", cfg.id_prefix.c_str(), i);
    auto [sample, info] = Generator(cfg, i).run(id);
    ds.samples.push_back(std::move(sample));
    ds.info.push_back(std::move(info));
  }
  return ds;
}

std::vector<ManifestRecord> synth_manifest_records(const SynthDataset& ds) {
  std::vector<ManifestRecord> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto& info = ds.info[i];
    out.push_back({"scene",
                   {{"id", s.id},
                    {"width", std::to_string(s.rgb.width)},
                    {"height", std::to_string(s.rgb.height)},
                    {"vehicles", std::to_string(info.vehicles)},
                    {"requested", std::to_string(info.requested_vehicles)},
                    {"rgb_occluded", std::to_string(info.rgb_occluded)},
                    {"tents", std::to_string(info.tents)},
                    {"branches", std::to_string(info.branches)}}});
  }
  return out;
}

}  // namespace mudet
