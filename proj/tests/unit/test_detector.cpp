// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mudet/dataio.hpp"
#include "mudet/detector.hpp"
#include "mudet/error.hpp"
#include "mudet/gradcheck.hpp"
#include "oracles.hpp"

using namespace mudet;

namespace {

std::vector<SceneSample> scenes(std::size_t n, std::uint64_t seed, std::size_t size = 64) {
  SynthConfig c;
  c.scenes = n;
  c.seed = seed;
  c.width = c.height = size;
  c.min_vehicles = 2;
  c.max_vehicles = 5;
  return synth_generate(c).samples;
}

std::vector<PreparedInput> prepared(const std::vector<SceneSample>& s, const ModelConfig& cfg) {
  std::vector<PreparedInput> out;
  for (const auto& x : s) out.push_back(prepare_input(x, cfg));
  return out;
}

std::vector<double> flat(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> all_parameters(ModelState& m) {
  std::vector<double> v;
  for (auto& p : m.state()) v.insert(v.end(), p.tensor.data().begin(), p.tensor.data().end());
  return v;
}

ModelConfig small_config(Modality m, std::uint64_t seed) {
  ModelConfig c;
  c.detector.modality = m;
  c.detector.seed = seed;
  c.detector.max_epochs = 1;
  c.detector.lr_initial = 4e-3;
  return c;
}

}  // namespace

TEST_SUITE("detector") {

TEST_CASE("zero inputs give half confidence everywhere and all-easy masks") {
  ModelConfig cfg;
  ModelState m = ModelState::init(cfg);
  PreparedInput in;
  in.width = in.height = 32;
  in.rgb = Tensor::zeros({5, 32, 32});
  in.h = Tensor::zeros({1, 32, 32});
  ForwardOutput out = forward(m, in);
  REQUIRE(out.has_conf);
  for (double v : out.conf.conf_rgb.data()) CHECK(v == 0.5);
  for (double v : out.conf.conf_h.data()) CHECK(v == 0.5);
  for (std::size_t i = 0; i < out.masks.size(); ++i) CHECK(out.masks.easy[i] == 1);
  for (double v : out.head.cls_prob.data()) CHECK(std::isfinite(v));
  for (double v : out.head.box.data()) CHECK(std::isfinite(v));
  CHECK(out.head.cls_prob.shape() == Shape{1, 8, 8});
  CHECK(out.head.box.shape() == Shape{9, 8, 8});
}

TEST_CASE("forward is per-sample and reproducible") {
  ModelConfig cfg;
  cfg.detector.seed = 42;
  ModelState m = ModelState::init(cfg);
  auto s = scenes(2, 9);
  PreparedInput a = prepare_input(s[0], cfg), b = prepare_input(s[1], cfg);
  const auto first = flat(forward(m, a).head.cls_prob);
  forward(m, b);
  CHECK(flat(forward(m, a).head.cls_prob) == first);
  ModelState again = ModelState::init(cfg);
  CHECK(flat(forward(again, a).head.box) == flat(forward(m, a).head.box));
}

TEST_CASE("seeded forward matches the stored digest") {
  // Regenerate by printing oracle::digest(...) after an intentional model change.
  ModelConfig cfg;
  cfg.detector.seed = 42;
  ModelState m = ModelState::init(cfg);
  PreparedInput in = prepare_input(scenes(1, 1)[0], cfg);
  ForwardOutput out = forward(m, in);
  std::vector<double> v = flat(out.head.cls_prob);
  const auto box = flat(out.head.box);
  v.insert(v.end(), box.begin(), box.end());
  const auto fused = flat(out.fused);
  v.insert(v.end(), fused.begin(), fused.end());
  MESSAGE("forward digest " << oracle::digest(v));
  CHECK(oracle::digest(v) == 9731097885030727645ULL);
}

TEST_CASE("indivisible inputs and modality checks") {
  ModelConfig cfg;
  ModelState m = ModelState::init(cfg);
  PreparedInput in;
  in.width = in.height = 30;
  in.rgb = Tensor::zeros({5, 30, 30});
  in.h = Tensor::zeros({1, 30, 30});
  CHECK_THROWS_AS(forward(m, in), ConfigError);

  ModelConfig rgb = small_config(Modality::rgb_only, 1);
  SceneSample s = scenes(1, 2)[0];
  s.hmap = {};
  PreparedInput p = prepare_input(s, rgb);
  CHECK(p.h.numel() == 1);  // default scalar: never filled
  CHECK(p.rgb.dim(0) == 5);
  CHECK_THROWS_AS(prepare_input(s, small_config(Modality::multimodal, 1)), ValidationError);
}

TEST_CASE("learning rate follows a cosine from the initial to the final value") {
  DetectorConfig d;
  CHECK(learning_rate(d, 0, 101) == d.lr_initial);
  CHECK(learning_rate(d, 100, 101) == doctest::Approx(d.lr_final).epsilon(1e-12));
  CHECK(learning_rate(d, 50, 101) == doctest::Approx((d.lr_initial + d.lr_final) / 2).epsilon(1e-12));
  for (std::size_t s = 1; s < 101; ++s) CHECK(learning_rate(d, s, 101) <= learning_rate(d, s - 1, 101));
}

TEST_CASE("one epoch on four tiles, bitwise reproducible") {
  for (Modality mod : {Modality::multimodal, Modality::rgb_only, Modality::h_only}) {
    ModelConfig cfg = small_config(mod, 5);
    auto data = prepared(scenes(4, 3), cfg);
    ModelState a = ModelState::init(cfg), b = ModelState::init(cfg);
    TrainLog la = train(a, data, data);
    TrainLog lb = train(b, data, {});
    REQUIRE(la.epochs.size() == 1);
    CHECK(std::isfinite(la.epochs[0].loss_total));
    CHECK(la.epochs[0].loss_total == lb.epochs[0].loss_total);
    CHECK(la.epochs[0].val_ap >= 0.0);
    CHECK(lb.epochs[0].val_ap < 0.0);
    CHECK(all_parameters(a) == all_parameters(b));
    CHECK(la.csv().rfind("epoch,loss_easy,loss_hard,loss_total,val_ap\n", 0) == 0);
  }
}

TEST_CASE("untrained model with neutral heads yields a finite deterministic set") {
  ModelConfig cfg;
  ModelState m = ModelState::init(cfg);
  for (double& w : m.head_cls.weight.mutable_data()) w = 0.0;
  for (double& b : m.head_cls.bias.mutable_data()) b = 0.0;
  PreparedInput in = prepare_input(scenes(1, 4)[0], cfg);
  ForwardOutput out = forward(m, in);
  for (double v : out.head.cls_prob.data()) CHECK(v == 0.5);
  auto dets = infer(m, in);
  CHECK(!dets.empty());
  CHECK(dets.size() <= out.head.cls_prob.numel());
  auto again = infer(m, in);
  REQUIRE(again.size() == dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    CHECK(dets[i].obb == again[i].obb);
    CHECK(dets[i].score > cfg.detector.conf_threshold);
    CHECK_NOTHROW(validate_obb(dets[i].obb));
  }
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      CHECK(polygon_iou(dets[i].obb, dets[j].obb) <= cfg.detector.nms_threshold);
    }
  }
}

TEST_CASE("parallel inference returns results in input order") {
  ModelConfig cfg = small_config(Modality::multimodal, 2);
  ModelState m = ModelState::init(cfg);
  for (double& b : m.head_cls.bias.mutable_data()) b = 0.0;
  auto data = prepared(scenes(5, 6), cfg);
  auto par = infer_all(m, data, 3);
  REQUIRE(par.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto seq = infer(m, data[i]);
    REQUIRE(seq.size() == par[i].size());
    for (std::size_t k = 0; k < seq.size(); ++k) CHECK(seq[k].obb == par[i][k].obb);
  }
}

TEST_CASE("model checkpoints") {
  auto dir = std::filesystem::temp_directory_path() / "mudet_ckpt_test";
  std::filesystem::create_directories(dir);
  ModelConfig cfg = small_config(Modality::h_only, 3);
  ModelState m = ModelState::init(cfg);
  auto data = prepared(scenes(2, 8), cfg);
  train(m, data, {});
  save_model(m, dir / "m.ckpt");
  ModelState back = load_model(cfg, dir / "m.ckpt");
  CHECK(all_parameters(back) == all_parameters(m));
  CHECK(flat(forward(back, data[0]).head.box) == flat(forward(m, data[0]).head.box));
  CHECK_THROWS_AS(load_model(small_config(Modality::rgb_only, 3), dir / "m.ckpt"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("micro model gradient check") {
  GradCheckOptions opt;
  opt.trials = 3;
  for (const auto& r : run_gradcheck_suite(opt)) {
    INFO(r.name);
    CHECK(r.max_error < 1e-4);
    CHECK(r.checked > r.skipped);
  }
}

TEST_CASE("ablation table") {
  std::vector<AblationRow> rows{{Modality::rgb_only, 1, 0.5, 0.75, 0.25, 2.0}};
  CHECK(ablation_csv(rows) ==
        "modality,seed,ap50,first_loss,final_loss,seconds\nrgb_only,1,0.500000,0.750000,0.250000,2.0\n");
}

}  // TEST_SUITE
