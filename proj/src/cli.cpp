// Copyright 2026 The mudet Authors
// SPDX-License-Identifier: Apache-2.0

#include "mudet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>

#include "mudet/config.hpp"
#include "mudet/error.hpp"
#include "mudet/gradcheck.hpp"
#include "mudet/metrics.hpp"

namespace mudet {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--set", sets, "override, e.g. detector.max_epochs=5")->take_all();
  }
  RunConfig resolve(const std::vector<std::string>& extra = {}) const {
    std::vector<std::string> all = sets;
    all.insert(all.end(), extra.begin(), extra.end());
    RunConfig cfg = resolve_config(config, all);
    std::cerr << "# resolved config\n" << config_to_json(cfg);
    return cfg;
  }
};

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      throw IoError("output directory " + dir.string() + " is not empty (use --force)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

std::vector<SceneSample> load_for(const fs::path& root, const RunConfig& cfg) {
  return read_dataset(root, cfg.detector.modality != Modality::rgb_only);
}

std::vector<PreparedInput> prepare_all(const std::vector<SceneSample>& samples,
                                       const RunConfig& cfg) {
  std::vector<PreparedInput> out;
  for (const auto& s : samples) out.push_back(prepare_input(s, cfg.model()));
  return out;
}

void print_stats(const DatasetStats& s) {
  std::printf("scenes %zu instances %zu mean_density %.3f max_density %zu\n", s.scenes,
              s.instances, s.mean_density, s.max_density);
}

int cmd_synth(const Common& common, const fs::path& out, long scenes, long long seed,
              double occluder_prob, double test_fraction, bool force) {
  std::vector<std::string> extra;
  if (scenes >= 0) extra.push_back("synth.scenes=" + std::to_string(scenes));
  if (seed >= 0) extra.push_back("synth.seed=" + std::to_string(seed));
  if (occluder_prob >= 0) extra.push_back("synth.occluder_prob=" + format_number(occluder_prob));
  RunConfig cfg = common.resolve(extra);
  if (!(test_fraction >= 0 && test_fraction < 1)) {
    throw ConfigError("--test-fraction must lie in [0, 1)");
  }
  prepare_output_dir(out, force);
  SynthDataset ds = synth_generate(cfg.synth);
  const auto records = synth_manifest_records(ds);
  const std::size_t n_test =
      static_cast<std::size_t>(static_cast<double>(ds.samples.size()) * test_fraction + 0.5);
  const std::size_t n_train = ds.samples.size() - n_test;
  if (n_test == 0) {
    write_dataset(ds.samples, out, records);
  } else {
    auto split = [&](std::size_t lo, std::size_t hi, const fs::path& dir) {
      std::vector<SceneSample> s(ds.samples.begin() + lo, ds.samples.begin() + hi);
      std::vector<ManifestRecord> r(records.begin() + lo, records.begin() + hi);
      write_dataset(s, dir, r);
    };
    split(0, n_train, out / "train");
    split(n_train, ds.samples.size(), out / "test");
  }
  write_file(out / "config.json", config_to_json(cfg));
  std::size_t occluded = 0;
  for (const auto& i : ds.info) occluded += i.rgb_occluded;
  write_file(out / "stats.csv", stats_csv(dataset_stats(ds.samples)));
  print_stats(dataset_stats(ds.samples));
  std::printf("rgb_occluded %zu train %zu test %zu\n", occluded, n_train, n_test);
  return 0;
}

int cmd_tile(const Common& common, const fs::path& in, const fs::path& out, bool force) {
  RunConfig cfg = common.resolve();
  const auto ids = dataset_ids(in);
  prepare_output_dir(out, force);
  std::vector<SceneSample> tiles;
  std::vector<TileRecord> records;
  for (const auto& id : ids) {
    TilingResult r = tile_scene(read_scene(in, id), cfg.tile);
    for (auto& t : r.tiles) tiles.push_back(std::move(t));
    records.insert(records.end(), r.manifest.begin(), r.manifest.end());
  }
  write_dataset(tiles, out, tile_manifest_records(records));
  std::printf("scenes %zu tiles %zu\n", ids.size(), tiles.size());
  return 0;
}

int cmd_stats(const fs::path& in, const fs::path& out, double area_bin) {
  std::vector<std::vector<ObbAnnotation>> labels;
  for (const auto& id : dataset_ids(in)) {
    labels.push_back(parse_annotations(read_file(ScenePaths::in(in, id).labels)));
  }
  DatasetStats s = dataset_stats(labels, area_bin);
  fs::create_directories(out);
  write_file(out / "stats.csv", stats_csv(s));
  write_file(out / "area_histogram.csv", area_histogram_csv(s));
  print_stats(s);
  return 0;
}

std::vector<std::string> detector_flags(const std::string& modality, long epochs, long long seed) {
  std::vector<std::string> extra;
  if (!modality.empty()) extra.push_back("detector.modality=\"" + modality + "\"");
  if (epochs > 0) extra.push_back("detector.max_epochs=" + std::to_string(epochs));
  if (seed >= 0) extra.push_back("detector.seed=" + std::to_string(seed));
  return extra;
}

int cmd_train(const Common& common, const fs::path& data, const fs::path& val,
              const fs::path& checkpoint, const fs::path& log_path, const std::string& modality,
              long epochs, long long seed) {
  RunConfig cfg = common.resolve(detector_flags(modality, epochs, seed));
  auto train_set = prepare_all(load_for(data, cfg), cfg);
  std::vector<PreparedInput> val_set;
  if (!val.empty()) val_set = prepare_all(load_for(val, cfg), cfg);
  ModelState model = ModelState::init(cfg.model());
  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log = train(model, train_set, val_set);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_model(model, checkpoint);
  const std::string csv = log.csv();
  if (!log_path.empty()) write_file(log_path, csv);
  std::cerr << csv;
  std::printf("trained %zu epochs on %zu samples in %.1f s, final loss %.6f\n",
              log.epochs.size(), train_set.size(), secs, log.epochs.back().loss_total);
  return 0;
}

int cmd_infer(const Common& common, const fs::path& data, const fs::path& checkpoint,
              const fs::path& out, const std::string& modality, bool force) {
  RunConfig cfg = common.resolve(detector_flags(modality, 0, -1));
  ModelState model = load_model(cfg.model(), checkpoint);
  const auto ids = dataset_ids(data);
  std::vector<PreparedInput> inputs;
  for (const auto& id : ids) {
    SceneSample s = cfg.detector.modality == Modality::rgb_only ? read_scene_rgb_only(data, id)
                                                                 : read_scene(data, id);
    inputs.push_back(prepare_input(s, cfg.model()));
  }
  auto dets = infer_all(model, inputs);
  prepare_output_dir(out, force);
  std::size_t total = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    write_file(out / (ids[i] + ".txt"), format_detections(dets[i]));
    total += dets[i].size();
  }
  std::printf("images %zu detections %zu\n", ids.size(), total);
  return 0;
}

int cmd_eval(const Common& common, const fs::path& gt_root, const fs::path& det_dir,
             const fs::path& pr_path, bool interpolate) {
  RunConfig cfg = common.resolve();
  std::vector<std::vector<ObbAnnotation>> gts;
  std::vector<std::vector<DetectionRecord>> dets;
  for (const auto& id : dataset_ids(gt_root)) {
    gts.push_back(parse_annotations(read_file(ScenePaths::in(gt_root, id).labels)));
    const fs::path p = det_dir / (id + ".txt");
    dets.push_back(fs::exists(p) ? parse_detections(read_file(p))
                                 : std::vector<DetectionRecord>{});
  }
  EvalResult r = evaluate(dets, gts, cfg.eval.iou_threshold, interpolate || cfg.eval.interpolate);
  for (const auto& [cls, ap] : r.per_class) {
    std::printf("class %d AP0.5 %.6f\n", cls, ap.ap);
  }
  if (r.per_class.empty()) std::fprintf(stderr, "warning: no ground truth, AP defined as 0\n");
  std::printf("AP0.5 %.6f\n", r.ap);
  if (!pr_path.empty()) {
    PrCurve curve = r.per_class.empty() ? PrCurve{} : r.per_class.begin()->second.curve;
    emit_pr_csv(curve, pr_path);
  }
  return 0;
}

int cmd_ablate(const Common& common, const fs::path& train_root, const fs::path& test_root,
               const std::vector<long long>& seeds, const fs::path& out, long epochs) {
  RunConfig cfg = common.resolve(detector_flags("", epochs, -1));
  auto train_set = read_dataset(train_root, true);
  auto test_set = read_dataset(test_root, true);
  std::vector<std::uint64_t> s(seeds.begin(), seeds.end());
  auto rows = run_ablation(train_set, test_set, cfg.model(), s);
  const std::string csv = ablation_csv(rows);
  if (!out.empty()) write_file(out, csv);
  std::printf("%s", csv.c_str());
  return 0;
}

int cmd_gradcheck(long long seed, long trials) {
  GradCheckOptions opt;
  opt.seed = static_cast<std::uint64_t>(seed);
  opt.trials = static_cast<std::size_t>(trials);
  bool ok = true;
  std::printf("check,max_rel_error,trials,checked,skipped,status\n");
  for (const auto& r : run_gradcheck_suite(opt)) {
    std::printf("%s,%.3e,%zu,%zu,%zu,%s\n", r.name.c_str(), r.max_error, r.trials, r.checked,
                r.skipped, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  if (!ok) throw NumericalError("gradient check exceeded tolerance " + format_number(opt.tolerance));
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"mudet: multimodal oriented vehicle detection toolkit"};
  app.require_subcommand(1);
  Common common;

  std::string out, in, data, val, checkpoint, log_path, modality, gt, det, pr;
  long scenes = -1, epochs = 0, trials = 10;
  long long seed = -1;
  double occluder_prob = -1.0, test_fraction = 0.0, area_bin = 10.0;
  bool force = false, interpolate = false;
  std::vector<long long> seeds{1, 2, 3};

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  common.attach(synth);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--scenes", scenes, "number of scenes");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--occluder-prob", occluder_prob, "occluder probability");
  synth->add_option("--test-fraction", test_fraction, "fraction written to <out>/test");
  synth->add_flag("--force", force, "replace a non-empty output directory");

  auto* tile = app.add_subcommand("tile", "cut scenes into overlapping tiles");
  common.attach(tile);
  tile->add_option("--in", in, "input dataset")->required();
  tile->add_option("--out", out, "output dataset")->required();
  tile->add_flag("--force", force, "replace a non-empty output directory");

  auto* stats = app.add_subcommand("stats", "dataset statistics");
  stats->add_option("--in", in, "dataset")->required();
  stats->add_option("--out", out, "directory for CSV reports")->required();
  stats->add_option("--area-bin", area_bin, "area histogram bin width (px^2)");

  auto* train_cmd = app.add_subcommand("train", "train a detector");
  common.attach(train_cmd);
  train_cmd->add_option("--data", data, "training dataset")->required();
  train_cmd->add_option("--val", val, "validation dataset");
  train_cmd->add_option("--checkpoint", checkpoint, "output checkpoint")->required();
  train_cmd->add_option("--log", log_path, "training log CSV");
  train_cmd->add_option("--modality", modality, "rgb_only, h_only or multimodal");
  train_cmd->add_option("--epochs", epochs, "override detector.max_epochs");
  train_cmd->add_option("--seed", seed, "override detector.seed");

  auto* infer_cmd = app.add_subcommand("infer", "run a trained detector");
  common.attach(infer_cmd);
  infer_cmd->add_option("--data", data, "dataset")->required();
  infer_cmd->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  infer_cmd->add_option("--out", out, "detections directory")->required();
  infer_cmd->add_option("--modality", modality, "rgb_only, h_only or multimodal");
  infer_cmd->add_flag("--force", force, "replace a non-empty output directory");

  auto* eval_cmd = app.add_subcommand("eval", "AP0.5 of detections against labels");
  common.attach(eval_cmd);
  eval_cmd->add_option("--gt", gt, "ground-truth dataset")->required();
  eval_cmd->add_option("--det", det, "detections directory")->required();
  eval_cmd->add_option("--pr", pr, "PR curve CSV");
  eval_cmd->add_flag("--interpolate", interpolate, "interpolated precision");

  auto* ablate = app.add_subcommand("ablate", "modality ablation");
  common.attach(ablate);
  ablate->add_option("--train", data, "training dataset")->required();
  ablate->add_option("--test", val, "test dataset")->required();
  ablate->add_option("--seeds", seeds, "seeds")->delimiter(',');
  ablate->add_option("--out", out, "AP table CSV");
  ablate->add_option("--epochs", epochs, "override detector.max_epochs");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--seed", seed, "seed");
  gradcheck->add_option("--trials", trials, "seeded inputs per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(common, out, scenes, seed, occluder_prob, test_fraction, force);
    if (*tile) return cmd_tile(common, in, out, force);
    if (*stats) return cmd_stats(in, out, area_bin);
    if (*train_cmd) {
      return cmd_train(common, data, val, checkpoint, log_path, modality, epochs, seed);
    }
    if (*infer_cmd) return cmd_infer(common, data, checkpoint, out, modality, force);
    if (*eval_cmd) return cmd_eval(common, gt, det, pr, interpolate);
    if (*ablate) return cmd_ablate(common, data, val, seeds, out, epochs);
    if (*gradcheck) return cmd_gradcheck(seed < 0 ? 1 : seed, trials);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace mudet
