// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <random>

#include "mudet/dataio.hpp"
#include "mudet/error.hpp"

using namespace mudet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SceneSample random_scene(std::mt19937_64& rng, std::size_t w, std::size_t h, const std::string& id) {
  SceneSample s;
  s.id = id;
  s.rgb = RgbImage::filled(w, h, 0, 0, 0);
  for (auto& p : s.rgb.pixels) p = static_cast<std::uint8_t>(rng());
  s.hmap.width = w;
  s.hmap.height = h;
  s.hmap.codes.resize(w * h);
  for (auto& c : s.hmap.codes) c = static_cast<std::uint16_t>(rng());
  s.hmap.scale = 0.01;
  s.hmap.offset = -1.5;
  std::uniform_real_distribution<double> u(8.0, static_cast<double>(std::min(w, h)) - 8.0);
  for (int i = 0; i < 4; ++i) s.annotations.push_back({i % 2, u(rng), u(rng), 9.25, 4.5, -30.0 + i});
  return s;
}

std::string dir_bytes(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += fs::relative(f, root).string() + "\n" + read_file(f);
  return all;
}

}  // namespace

TEST_SUITE("data-io") {

TEST_CASE("scene round trip is exact") {
  std::mt19937_64 rng(1);
  TempDir a("mudet_io_a"), b("mudet_io_b");
  SceneSample s = random_scene(rng, 64, 64, "s0");
  write_scene(s, a.path);
  SceneSample back = read_scene(a.path, "s0");
  CHECK(back.rgb == s.rgb);
  CHECK(back.hmap == s.hmap);
  CHECK(back.annotations == s.annotations);
  write_scene(back, b.path);
  CHECK(dir_bytes(a.path) == dir_bytes(b.path));
}

TEST_CASE("annotation and height formats") {
  auto anns = parse_annotations("# header\n0 32.5 40.0 12 6 -30\n\n");
  REQUIRE(anns.size() == 1);
  CHECK(anns[0] == ObbAnnotation{0, 32.5, 40.0, 12, 6, -30});
  CHECK(parse_annotations(format_annotations(anns)) == anns);

  HeightMap h;
  h.width = h.height = 1;
  h.codes = {512};
  h.scale = 0.01;
  CHECK(h.value(0, 0) == doctest::Approx(5.12).epsilon(1e-15));
  CHECK(h.encode(5.12) == 512);

  auto dets = parse_detections("0 1 2 3 4 5 0.75\n");
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].score == 0.75);
  CHECK(parse_detections(format_detections(dets))[0].obb == dets[0].obb);
  CHECK_THROWS_AS(parse_detections("0 1 2 3 4 5 1.5\n"), ParseError);
}

TEST_CASE("malformed files report their line") {
  try {
    parse_annotations("0 1 2 3 4 5\n# ok\n0 1 2 x 4 5\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_annotations("0 1 2 3 4 5 6\n"), ParseError);
  CHECK_THROWS_AS(parse_annotations("0 1 2 3 4 5garbage\n"), ParseError);
  CHECK_THROWS_AS(parse_annotations("0 1 2 -3 4 5\n"), ParseError);

  RgbImage img = RgbImage::filled(2, 2, 1, 2, 3);
  const std::string ppm = encode_ppm(img);
  CHECK(decode_ppm(ppm) == img);
  CHECK_THROWS_AS(decode_ppm(ppm + "x"), ParseError);
  CHECK_THROWS_AS(decode_ppm(ppm.substr(0, ppm.size() - 1)), ParseError);
  HeightMap h;
  h.width = 3;
  h.height = 1;
  h.codes = {1, 300, 65535};
  const std::string pgm = encode_pgm16(h);
  CHECK(decode_pgm16(pgm).codes == h.codes);
  CHECK_THROWS_AS(decode_pgm16(pgm + "\n"), ParseError);

  try {
    parse_manifest("# mudet manifest v1\nscene id=a\nscene id=b id=c\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("extent mismatch between image and height map") {
  std::mt19937_64 rng(2);
  TempDir d("mudet_io_mismatch");
  SceneSample s = random_scene(rng, 32, 32, "m");
  write_scene(s, d.path);
  HeightMap small;
  small.width = small.height = 16;
  small.codes.assign(256, 0);
  write_file(ScenePaths::in(d.path, "m").height, encode_pgm16(small));
  CHECK_THROWS_AS(read_scene(d.path, "m"), ParseError);
  CHECK_THROWS_AS(read_scene(d.path, "missing"), IoError);
}

TEST_CASE("manifest and dataset listing") {
  std::mt19937_64 rng(3);
  TempDir d("mudet_io_ds");
  std::vector<SceneSample> scenes{random_scene(rng, 32, 32, "x1"), random_scene(rng, 32, 32, "x0")};
  write_dataset(scenes, d.path);
  CHECK(dataset_ids(d.path) == std::vector<std::string>{"x1", "x0"});
  auto back = read_dataset(d.path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].annotations == scenes[0].annotations);
  auto recs = parse_manifest(read_file(d.path / "manifest.txt"));
  CHECK(format_manifest(recs) == read_file(d.path / "manifest.txt"));

  TempDir e("mudet_io_empty");
  write_dataset({}, e.path);
  CHECK(dataset_ids(e.path).empty());
}

TEST_CASE("tile origins") {
  const auto xs = tile_origins(5184, 1024, 200);
  CHECK(xs == std::vector<std::size_t>{0, 824, 1648, 2472, 3296, 4120, 4160});
  CHECK(tile_origins(1024, 1024, 200) == std::vector<std::size_t>{0});
  CHECK(tile_origins(1848, 1024, 200) == std::vector<std::size_t>{0, 824});
  CHECK_THROWS(tile_origins(500, 1024, 200));
  CHECK_THROWS_AS((TileSpec{128, 128, 0.4}.validate()), ValidationError);
  CHECK_THROWS_AS((TileSpec{128, 0, 0.4}.validate()), ValidationError);

  for (std::size_t extent : {1000u, 3000u, 5184u}) {
    for (auto [t, o] : {std::pair<std::size_t, std::size_t>{640, 200}, {800, 200}, {1024, 200},
                        {800, 400}}) {
      if (extent < t) continue;
      const auto org = tile_origins(extent, t, o);
      std::vector<int> cover(extent, 0);
      for (std::size_t x : org) {
        CHECK(x + t <= extent);
        for (std::size_t i = x; i < x + t; ++i) ++cover[i];
      }
      CHECK(org.back() + t == extent);
      for (int c : cover) CHECK(c >= 1);
      for (std::size_t k = 1; k < org.size(); ++k) {
        for (std::size_t i = org[k]; i < org[k - 1] + t; ++i) CHECK(cover[i] >= 2);
      }
    }
  }
}

TEST_CASE("tiling keeps geometry and pixel alignment") {
  std::mt19937_64 rng(4);
  SceneSample s = random_scene(rng, 96, 80, "big");
  s.annotations = {{0, 20, 20, 10, 4, 30},     // inside the first tile only
                   {0, 47, 40, 10, 6, 0},      // straddles a tile edge
                   {0, 94, 40, 10, 6, 0}};     // mostly outside the scene border
  TileSpec spec{48, 16, 0.4};
  TilingResult r = tile_scene(s, spec);
  CHECK(r.tiles.size() == 3 * 2);  // x origins 0, 32, 48; y origins 0, 32
  CHECK(r.manifest.size() == r.tiles.size());
  bool found_inside = false;
  for (std::size_t i = 0; i < r.tiles.size(); ++i) {
    const auto& tile = r.tiles[i];
    const auto& rec = r.manifest[i];
    CHECK(tile.id == rec.id);
    for (std::size_t y = 0; y < 48; y += 7) {
      for (std::size_t x = 0; x < 48; x += 5) {
        CHECK(tile.rgb.at(x, y)[1] == s.rgb.at(rec.x + x, rec.y + y)[1]);
        CHECK(tile.hmap.codes[y * 48 + x] == s.hmap.codes[(rec.y + y) * 96 + rec.x + x]);
      }
    }
    for (const auto& a : tile.annotations) {
      CHECK((a.xc >= 0 && a.xc <= 48 && a.yc >= 0 && a.yc <= 48));
      ObbAnnotation back = tile_to_scene(a, rec);
      if (back.w == 10 && back.h == 4 && back.theta == 30) {
        CHECK(std::abs(back.xc - 20) < 1e-9);
        CHECK(std::abs(back.yc - 20) < 1e-9);
        found_inside = true;
      }
    }
  }
  CHECK(found_inside);

  SceneSample sq = random_scene(rng, 64, 64, "sq");
  TilingResult one = tile_scene(sq, {64, 16, 0.4});
  REQUIRE(one.tiles.size() == 1);
  CHECK(one.tiles[0].annotations == sq.annotations);
  CHECK(one.tiles[0].rgb == sq.rgb);
}

TEST_CASE("clipped boxes follow the visible-fraction rule") {
  SceneSample s;
  s.id = "c";
  s.rgb = RgbImage::filled(100, 40, 0, 0, 0);
  s.hmap.width = 100;
  s.hmap.height = 40;
  s.hmap.codes.assign(4000, 0);
  s.annotations = {{0, 37, 20, 10, 6, 0}};  // 8 of 10 px inside tile [0, 40)
  TilingResult r = tile_scene(s, {40, 10, 0.4});
  REQUIRE(r.tiles.size() == 3);  // origins 0, 30, 60
  REQUIRE(r.tiles[0].annotations.size() == 1);
  const auto& a = r.tiles[0].annotations[0];
  CHECK(a.w * a.h == doctest::Approx(48));
  CHECK(a.xc == doctest::Approx(36));
  REQUIRE(r.tiles[1].annotations.size() == 1);  // fully inside the second tile
  CHECK(r.tiles[1].annotations[0].xc == doctest::Approx(7));
  CHECK(r.tiles[2].annotations.empty());
}

TEST_CASE("dataset statistics") {
  DatasetStats empty = dataset_stats(std::vector<std::vector<ObbAnnotation>>{});
  CHECK(empty.instances == 0);
  CHECK(empty.scenes == 0);
  CHECK(empty.area_histogram.empty());
  DatasetStats one = dataset_stats(std::vector<std::vector<ObbAnnotation>>{{{0, 5, 5, 10, 6, 0}}});
  CHECK(one.instances == 1);
  CHECK(one.per_class.at(0) == 1);
  CHECK(one.area_histogram.at(60) == 1);
  CHECK(stats_csv(one).find("instances") != std::string::npos);
  CHECK(area_histogram_csv(one).find("60") != std::string::npos);
}

}  // TEST_SUITE
