// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: clip generation, training, evaluation, the
// scan benchmark, and single-clip demo inference.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "demmamba/config_io.hpp"
#include "demmamba/image_io.hpp"
#include "demmamba/metrics.hpp"
#include "demmamba/model.hpp"
#include "demmamba/synth.hpp"
#include "demmamba/train.hpp"

namespace demmamba::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// shared helpers

inline Tensor<float> center_clean(const synth::ClipData& clip) {
  std::int64_t t = clip.clean.dim(0) / 2 * 0 + clip.raw.dim(0) / 2;
  std::int64_t h = clip.raw.dim(1), w = clip.raw.dim(2);
  const float* src = clip.clean.data() + t * 3 * h * w;
  return Tensor<float>::from_data(std::vector<float>(src, src + 3 * h * w), {3, h, w});
}

inline Tensor<float> center_raw(const synth::ClipData& clip) {
  std::int64_t t = clip.raw.dim(0) / 2;
  std::int64_t h = clip.raw.dim(1), w = clip.raw.dim(2);
  const float* src = clip.raw.data() + t * h * w;
  return Tensor<float>::from_data(std::vector<float>(src, src + h * w), {h, w});
}

struct LoadedClip {
  std::string path;
  synth::ClipData data;
};

inline std::vector<LoadedClip> load_clip_dir(const std::string& dir, std::int64_t* skipped) {
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".mvc") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<LoadedClip> clips;
  for (const auto& p : paths) {
    try {
      clips.push_back({p, synth::read_clip(p)});
    } catch (const FormatError& e) {
      std::cerr << "warning: skipping corrupt clip " << p << ": " << e.what() << "\n";
      if (skipped != nullptr) ++(*skipped);
    }
  }
  return clips;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'", 0);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad JSON in '" + path + "': " + e.what(), 0);
  }
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path + "' for writing", 0);
  out << j.dump(2) << "\n";
  if (!out) throw FormatError("write failed for '" + path + "'", 0);
}

/// Resolves model+train configs from --config or a manifest next to a
/// checkpoint.
inline void resolve_configs(const std::string& config_path, const std::string& ckpt_path,
                            ModelConfig* model_cfg, TrainConfig* train_cfg) {
  std::string path = config_path;
  if (path.empty() && !ckpt_path.empty()) {
    fs::path manifest = fs::path(ckpt_path).parent_path() / "manifest.json";
    if (fs::exists(manifest)) path = manifest.string();
  }
  if (path.empty()) return;  // defaults
  auto j = load_json_file(path);
  if (model_cfg != nullptr && j.contains("model")) *model_cfg = model_config_from_json(j.at("model"));
  if (train_cfg != nullptr && j.contains("train")) *train_cfg = train_config_from_json(j.at("train"));
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  std::string out_dir;
  std::int64_t clips = 4;
  std::int64_t frames = 3;
  std::int64_t height = 64, width = 64;
  std::uint64_t seed = 0;
  double amplitude = 0.3;
};

inline int cmd_gen(const GenOptions& opt) {
  fs::create_directories(opt.out_dir);
  nlohmann::json index;
  index["clips"] = nlohmann::json::array();
  for (std::int64_t i = 0; i < opt.clips; ++i) {
    std::uint64_t seed = opt.seed + static_cast<std::uint64_t>(i);
    auto clip = synth::make_clip(seed, opt.frames, opt.height, opt.width, opt.amplitude);
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04lld.mvc", static_cast<long long>(i));
    std::string path = (fs::path(opt.out_dir) / name).string();
    synth::write_clip(path, clip);
    index["clips"].push_back({{"path", name}, {"seed", seed}});
  }
  index["count"] = opt.clips;
  index["frames"] = opt.frames;
  index["height"] = opt.height;
  index["width"] = opt.width;
  index["amplitude"] = opt.amplitude;
  index["base_seed"] = opt.seed;
  write_json_file((fs::path(opt.out_dir) / "index.json").string(), index);
  std::cout << "wrote " << opt.clips << " clips to " << opt.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data_dir;
  std::string config_path;
  std::string out_dir;
  std::string ablation;
  std::string resume;
  std::int64_t epochs = -1;     // -1: take from config
  std::int64_t max_steps = 0;   // 0: no cap
};

inline int cmd_train(const TrainOptions& opt) {
  ModelConfig mcfg;
  TrainConfig tcfg;
  resolve_configs(opt.config_path, "", &mcfg, &tcfg);
  if (!opt.ablation.empty()) mcfg.ablation = ablation_from_name(opt.ablation);
  if (opt.epochs >= 0) tcfg.epochs = opt.epochs;
  mcfg.validate();
  tcfg.validate();

  std::int64_t skipped = 0;
  auto loaded = load_clip_dir(opt.data_dir, &skipped);
  if (loaded.empty()) {
    std::cerr << "error: no usable clips in " << opt.data_dir << "\n";
    return 1;
  }
  std::vector<synth::ClipData> clips;
  for (auto& lc : loaded) clips.push_back(std::move(lc.data));
  for (const auto& c : clips) {
    require(c.raw.dim(0) == mcfg.frames, "clip frame count " + std::to_string(c.raw.dim(0)) +
                                             " does not match configured frames " +
                                             std::to_string(mcfg.frames));
    require(c.raw.dim(1) % 4 == 0 && c.raw.dim(2) % 4 == 0,
            "clip extents must be divisible by 4");
  }

  fs::create_directories(opt.out_dir);
  DemMamba<float> model(mcfg, tcfg.seed);

  std::int64_t start_step = 0, start_epoch = 0;
  if (!opt.resume.empty()) {
    auto params = model.parameters();
    load_checkpoint(opt.resume, params);
    fs::path manifest_path = fs::path(opt.resume).parent_path() / "manifest.json";
    if (fs::exists(manifest_path)) {
      auto prev = RunManifest::from_json(load_json_file(manifest_path.string()));
      start_step = prev.steps_completed;
      start_epoch = prev.epochs_completed;
    }
    std::cout << "resumed from " << opt.resume << " at step " << start_step << "\n";
  }

  Trainer<float> trainer(model, tcfg, start_step);

  RunManifest manifest;
  manifest.command = "train";
  manifest.model = mcfg;
  manifest.train = tcfg;
  manifest.data_dir = opt.data_dir;
  manifest.output_dir = opt.out_dir;
  manifest.seed = tcfg.seed;
  manifest.skipped_clips = skipped;

  std::ofstream log((fs::path(opt.out_dir) / "train.jsonl").string(), std::ios::app);
  auto save_state = [&](std::int64_t epochs_done) {
    auto params = model.parameters();
    save_checkpoint((fs::path(opt.out_dir) / "model.dmmb").string(), params);
    manifest.steps_completed = trainer.steps_done();
    manifest.epochs_completed = epochs_done;
    write_json_file((fs::path(opt.out_dir) / "manifest.json").string(), manifest.to_json());
  };

  trainer.run(
      clips, tcfg.epochs, opt.max_steps,
      [&](const StepRecord& r) {
        nlohmann::json line = {{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr},
                               {"loss", r.loss}, {"psnr", r.psnr}};
        log << line.dump() << "\n";
      },
      [&](std::int64_t e) {
        auto params = model.parameters();
        char name[40];
        std::snprintf(name, sizeof(name), "ckpt_epoch_%04lld.dmmb", static_cast<long long>(e));
        save_checkpoint((fs::path(opt.out_dir) / name).string(), params);
        save_state(e + 1);
      },
      start_epoch);
  save_state(std::max(start_epoch, std::min(tcfg.epochs, start_epoch + 1) - 1) + 1);
  log.flush();

  std::cout << "trained " << trainer.steps_done() << " steps on " << clips.size() << " clips ("
            << skipped << " skipped); outputs in " << opt.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string ckpt;
  std::string data_dir;
  std::string config_path;
  std::string out_path;
};

inline int cmd_eval(const EvalOptions& opt) {
  ModelConfig mcfg;
  resolve_configs(opt.config_path, opt.ckpt, &mcfg, nullptr);
  mcfg.validate();
  DemMamba<float> model(mcfg, 0);
  auto params = model.parameters();
  load_checkpoint(opt.ckpt, params);

  std::int64_t skipped = 0;
  auto clips = load_clip_dir(opt.data_dir, &skipped);
  if (clips.empty()) {
    std::cerr << "error: no usable clips in " << opt.data_dir << "\n";
    return 1;
  }

  NoGradGuard ng;
  nlohmann::json report;
  report["parameters"] = model.param_count();
  report["clips"] = nlohmann::json::array();
  double sum_psnr = 0, sum_ssim = 0, sum_base = 0, total_seconds = 0;
  std::int64_t total_frames = 0;
  for (const auto& lc : clips) {
    auto t0 = std::chrono::steady_clock::now();
    auto restored = clamp01(model.forward(lc.data.raw));
    auto t1 = std::chrono::steady_clock::now();
    auto clean = center_clean(lc.data);
    double p = psnr(restored, clean);
    double s = ssim(restored, clean);
    double base = psnr(synth::demosaic_bilinear(center_raw(lc.data)), clean);
    sum_psnr += p;
    sum_ssim += s;
    sum_base += base;
    total_seconds += std::chrono::duration<double>(t1 - t0).count();
    total_frames += lc.data.raw.dim(0);
    report["clips"].push_back({{"path", lc.path}, {"psnr", p}, {"ssim", s},
                               {"baseline_psnr", base}});
    std::printf("%s  psnr %.4f dB  ssim %.4f  (degraded input %.4f dB)\n", lc.path.c_str(), p, s,
                base);
  }
  double n = static_cast<double>(clips.size());
  report["mean_psnr"] = sum_psnr / n;
  report["mean_ssim"] = sum_ssim / n;
  report["mean_baseline_psnr"] = sum_base / n;
  report["mean_inference_seconds_per_frame"] = total_seconds / static_cast<double>(total_frames);
  report["skipped_clips"] = skipped;
  std::printf("mean  psnr %.4f dB  ssim %.4f  baseline %.4f dB  parameters %lld  %.4f s/frame\n",
              sum_psnr / n, sum_ssim / n, sum_base / n,
              static_cast<long long>(model.param_count()),
              total_seconds / static_cast<double>(total_frames));

  std::string out = opt.out_path.empty()
                        ? (fs::path(opt.ckpt).parent_path() / "eval_report.json").string()
                        : opt.out_path;
  write_json_file(out, report);
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::vector<std::int64_t> lengths = {256, 512, 1024, 2048, 4096, 8192, 16384};
  int trials = 3;
  std::string out_csv;
  bool inject_fault = false;
};

inline int cmd_bench(const BenchOptions& opt) {
  std::string err;
  auto rows = bench_scan(opt.lengths, opt.trials, opt.inject_fault, &err);
  if (!err.empty()) {
    std::cerr << "error: " << err << "\n";
    return 1;
  }
  std::string csv = "L,mean_seconds,slope\n";
  for (const auto& r : rows) {
    char line[96];
    std::snprintf(line, sizeof(line), "%lld,%.9f,%.4f\n", static_cast<long long>(r.length),
                  r.mean_seconds, r.slope);
    csv += line;
  }
  std::cout << csv;
  if (!opt.out_csv.empty()) {
    std::ofstream out(opt.out_csv);
    out << csv;
    if (!out) {
      std::cerr << "error: cannot write " << opt.out_csv << "\n";
      return 1;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// demo

struct DemoOptions {
  std::string ckpt;
  std::string clip;
  std::string out_dir;
  std::string config_path;
};

inline int cmd_demo(const DemoOptions& opt) {
  ModelConfig mcfg;
  resolve_configs(opt.config_path, opt.ckpt, &mcfg, nullptr);
  mcfg.validate();
  DemMamba<float> model(mcfg, 0);
  auto params = model.parameters();
  load_checkpoint(opt.ckpt, params);

  auto clip = synth::read_clip(opt.clip);
  fs::create_directories(opt.out_dir);

  NoGradGuard ng;
  auto restored = clamp01(model.forward(clip.raw));
  auto clean = center_clean(clip);
  auto degraded = synth::demosaic_bilinear(center_raw(clip));

  write_ppm((fs::path(opt.out_dir) / "degraded.ppm").string(), degraded);
  write_ppm((fs::path(opt.out_dir) / "restored.ppm").string(), restored);
  write_ppm((fs::path(opt.out_dir) / "clean.ppm").string(), clean);
  std::printf("restored psnr %.4f dB (degraded input %.4f dB); images in %s\n",
              psnr(restored, clean), psnr(degraded, clean), opt.out_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// argv wiring

inline int run(int argc, const char* const* argv) {
  CLI::App app{"alignment-free raw video demoireing with spatio-temporal selective scans"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* sgen = app.add_subcommand("gen", "generate synthetic moire clips");
  sgen->add_option("--out", gen.out_dir, "output directory")->required();
  sgen->add_option("--clips", gen.clips, "number of clips");
  sgen->add_option("--frames", gen.frames, "frames per clip");
  std::string size = "64x64";
  sgen->add_option("--size", size, "clip size HxW, e.g. 64x64");
  sgen->add_option("--seed", gen.seed, "base seed");
  sgen->add_option("--amplitude", gen.amplitude, "moire amplitude in [0,1]");

  TrainOptions train;
  auto* strain = app.add_subcommand("train", "train a model on a clip directory");
  strain->add_option("--data", train.data_dir, "clip directory")->required();
  strain->add_option("--epochs", train.epochs, "epoch count (overrides config)");
  strain->add_option("--config", train.config_path, "JSON config path");
  strain->add_option("--out", train.out_dir, "output directory")->required();
  strain->add_option("--ablation", train.ablation, "full|no_afb|no_cab|all_smb|all_tmb");
  strain->add_option("--resume", train.resume, "checkpoint to resume from");
  strain->add_option("--steps", train.max_steps, "hard cap on optimization steps");

  EvalOptions eval;
  auto* seval = app.add_subcommand("eval", "evaluate a checkpoint on a clip directory");
  seval->add_option("--ckpt", eval.ckpt, "checkpoint path")->required();
  seval->add_option("--data", eval.data_dir, "clip directory")->required();
  seval->add_option("--config", eval.config_path, "JSON config path (default: manifest next to ckpt)");
  seval->add_option("--out", eval.out_path, "report JSON path");

  BenchOptions bench;
  auto* sbench = app.add_subcommand("bench", "time the selective scans and fit the scaling slope");
  std::string lengths_csv;
  sbench->add_option("--lengths", lengths_csv, "comma-separated lengths (default 256..16384)");
  sbench->add_option("--trials", bench.trials, "trials per length");
  sbench->add_option("--out", bench.out_csv, "CSV output path");
  sbench->add_flag("--inject-fault", bench.inject_fault, "corrupt one output (equivalence-check test)");

  DemoOptions demo;
  auto* sdemo = app.add_subcommand("demo", "restore one clip and export side-by-side images");
  sdemo->add_option("--ckpt", demo.ckpt, "checkpoint path")->required();
  sdemo->add_option("--clip", demo.clip, "clip file")->required();
  sdemo->add_option("--out", demo.out_dir, "image output directory")->required();
  sdemo->add_option("--config", demo.config_path, "JSON config path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (sgen->parsed()) {
      auto x = size.find('x');
      if (x == std::string::npos) throw UsageError("--size must look like 64x64");
      gen.height = std::stoll(size.substr(0, x));
      gen.width = std::stoll(size.substr(x + 1));
      return cmd_gen(gen);
    }
    if (strain->parsed()) return cmd_train(train);
    if (seval->parsed()) return cmd_eval(eval);
    if (sbench->parsed()) {
      if (!lengths_csv.empty()) {
        bench.lengths.clear();
        std::size_t pos = 0;
        while (pos < lengths_csv.size()) {
          auto comma = lengths_csv.find(',', pos);
          if (comma == std::string::npos) comma = lengths_csv.size();
          bench.lengths.push_back(std::stoll(lengths_csv.substr(pos, comma - pos)));
          pos = comma + 1;
        }
      }
      return cmd_bench(bench);
    }
    if (sdemo->parsed()) return cmd_demo(demo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace demmamba::cli
