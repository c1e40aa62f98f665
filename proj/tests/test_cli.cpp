// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "demmamba/cli.hpp"
#include "test_util.hpp"

using namespace demmamba;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv = {"demmamba"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& s) const { return (path / s).string(); }
};

void write_tiny_config(const std::string& path, std::int64_t channels = 6,
                       const std::string& extra_train = "") {
  std::ofstream out(path);
  out << R"({"model": {"groups": 1, "blocks_per_kind": 1, "frames": 3,
                       "block": {"channels": )"
      << channels << R"(, "state_size": 3}},
             "train": {"batch_size": 2, "seed": 3, "milestones": [])" << extra_train << "}}";
}

}  // namespace

TEST_CASE("gen writes the requested clips plus an index, deterministically") {
  TempDir a("dm_cli_gen_a"), b("dm_cli_gen_b");
  CHECK(run_cli({"gen", "--out", a.str(), "--clips", "4", "--frames", "3", "--size", "64x64",
                 "--seed", "11", "--amplitude", "0.3"}) == 0);
  for (int i = 0; i < 4; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%04d.mvc", i);
    CHECK(fs::exists(a.path / name));
    auto clip = synth::read_clip(a.sub(name));
    CHECK(clip.raw.dim(0) == 3);
    CHECK(clip.raw.dim(1) == 64);
  }
  CHECK(fs::exists(a.path / "index.json"));

  CHECK(run_cli({"gen", "--out", b.str(), "--clips", "4", "--frames", "3", "--size", "64x64",
                 "--seed", "11", "--amplitude", "0.3"}) == 0);
  CHECK(slurp(a.sub("clip_0002.mvc")) == slurp(b.sub("clip_0002.mvc")));
}

TEST_CASE("gen with zero amplitude produces the mosaicked clean signal") {
  TempDir d("dm_cli_gen_zero");
  CHECK(run_cli({"gen", "--out", d.str(), "--clips", "1", "--frames", "3", "--size", "32x32",
                 "--seed", "2", "--amplitude", "0"}) == 0);
  auto clip = synth::read_clip(d.sub("clip_0000.mvc"));
  auto expected = synth::mosaic_bayer(clip.clean);
  CHECK(test::max_abs_diff(clip.raw, expected) == 0.0);
}

TEST_CASE("gen fails with nonzero exit on an unwritable path") {
  CHECK(run_cli({"gen", "--out", "/proc/definitely/not/writable", "--clips", "1"}) != 0);
}

TEST_CASE("train smoke run: losses logged, manifest records the mode") {
  TempDir data("dm_cli_train_data"), run("dm_cli_train_run");
  REQUIRE(run_cli({"gen", "--out", data.str(), "--clips", "4", "--frames", "3", "--size", "32x32",
                   "--seed", "5", "--amplitude", "0.25"}) == 0);
  std::string cfg = run.sub("cfg.json");
  write_tiny_config(cfg);
  CHECK(run_cli({"train", "--data", data.str(), "--config", cfg, "--out", run.sub("out"),
                 "--epochs", "4", "--ablation", "no_afb"}) == 0);

  // loss decreases over the smoke run
  std::ifstream log(run.sub("out") + "/train.jsonl");
  std::string line;
  std::vector<double> losses;
  while (std::getline(log, line)) losses.push_back(nlohmann::json::parse(line).at("loss"));
  REQUIRE(losses.size() == 8);  // 4 epochs x 2 steps
  CHECK(losses.back() < losses.front());

  auto manifest = cli::load_json_file(run.sub("out") + "/manifest.json");
  CHECK(manifest.at("model").at("ablation") == "no_afb");
  CHECK(manifest.at("steps_completed") == 8);
  CHECK(fs::exists(run.path / "out" / "model.dmmb"));
  CHECK(fs::exists(run.path / "out" / "ckpt_epoch_0003.dmmb"));
}

TEST_CASE("train skips corrupt clips with a warning count") {
  TempDir data("dm_cli_corrupt_data"), run("dm_cli_corrupt_run");
  REQUIRE(run_cli({"gen", "--out", data.str(), "--clips", "3", "--frames", "3", "--size", "32x32",
                   "--seed", "9"}) == 0);
  {
    std::ofstream bad(data.sub("clip_0001.mvc"), std::ios::binary | std::ios::trunc);
    bad << "not a clip";
  }
  std::string cfg = run.sub("cfg.json");
  write_tiny_config(cfg);
  CHECK(run_cli({"train", "--data", data.str(), "--config", cfg, "--out", run.sub("out"),
                 "--epochs", "1"}) == 0);
  auto manifest = cli::load_json_file(run.sub("out") + "/manifest.json");
  CHECK(manifest.at("skipped_clips") == 1);
}

TEST_CASE("resume continues the step count monotonically") {
  TempDir data("dm_cli_resume_data"), run("dm_cli_resume_run");
  REQUIRE(run_cli({"gen", "--out", data.str(), "--clips", "2", "--frames", "3", "--size", "32x32",
                   "--seed", "13"}) == 0);
  std::string cfg = run.sub("cfg.json");
  write_tiny_config(cfg);
  REQUIRE(run_cli({"train", "--data", data.str(), "--config", cfg, "--out", run.sub("a"),
                   "--epochs", "2"}) == 0);
  REQUIRE(run_cli({"train", "--data", data.str(), "--config", cfg, "--out", run.sub("b"),
                   "--epochs", "4", "--resume", run.sub("a") + "/model.dmmb"}) == 0);
  std::ifstream log(run.sub("b") + "/train.jsonl");
  std::string line;
  std::vector<std::int64_t> steps;
  while (std::getline(log, line)) steps.push_back(nlohmann::json::parse(line).at("step"));
  REQUIRE(!steps.empty());
  CHECK(steps.front() == 3);  // two epochs of one step each came before
  for (std::size_t i = 1; i < steps.size(); ++i) CHECK(steps[i] == steps[i - 1] + 1);
}

TEST_CASE("eval reports metrics, parameters, and is deterministic") {
  TempDir data("dm_cli_eval_data"), run("dm_cli_eval_run");
  REQUIRE(run_cli({"gen", "--out", data.str(), "--clips", "2", "--frames", "3", "--size", "32x32",
                   "--seed", "21"}) == 0);
  std::string cfg = run.sub("cfg.json");
  write_tiny_config(cfg);
  REQUIRE(run_cli({"train", "--data", data.str(), "--config", cfg, "--out", run.sub("out"),
                   "--epochs", "2"}) == 0);

  std::string r1 = run.sub("report1.json"), r2 = run.sub("report2.json");
  CHECK(run_cli({"eval", "--ckpt", run.sub("out") + "/model.dmmb", "--data", data.str(), "--out",
                 r1}) == 0);
  CHECK(run_cli({"eval", "--ckpt", run.sub("out") + "/model.dmmb", "--data", data.str(), "--out",
                 r2}) == 0);
  // metric fields reproduce bitwise; only the wall-clock timing may move
  auto j1 = cli::load_json_file(r1), j2 = cli::load_json_file(r2);
  j1.erase("mean_inference_seconds_per_frame");
  j2.erase("mean_inference_seconds_per_frame");
  CHECK(j1 == j2);

  auto report = cli::load_json_file(r1);
  CHECK(report.contains("parameters"));
  CHECK(report.at("clips").size() == 2);
  CHECK(report.contains("mean_psnr"));
  CHECK(report.contains("mean_ssim"));
  CHECK(report.contains("mean_inference_seconds_per_frame"));
}

TEST_CASE("eval with a mismatched config names the offending parameter") {
  TempDir data("dm_cli_mismatch_data"), run("dm_cli_mismatch_run");
  REQUIRE(run_cli({"gen", "--out", data.str(), "--clips", "1", "--frames", "3", "--size", "32x32",
                   "--seed", "23"}) == 0);
  std::string cfg6 = run.sub("c6.json"), cfg8 = run.sub("c8.json");
  write_tiny_config(cfg6, 6);
  write_tiny_config(cfg8, 9);
  REQUIRE(run_cli({"train", "--data", data.str(), "--config", cfg6, "--out", run.sub("out"),
                   "--epochs", "1"}) == 0);
  CHECK(run_cli({"eval", "--ckpt", run.sub("out") + "/model.dmmb", "--data", data.str(),
                 "--config", cfg8}) != 0);
}

TEST_CASE("demo writes images matching the clip extents and the eval psnr") {
  TempDir data("dm_cli_demo_data"), run("dm_cli_demo_run");
  REQUIRE(run_cli({"gen", "--out", data.str(), "--clips", "1", "--frames", "3", "--size", "32x32",
                   "--seed", "29"}) == 0);
  std::string cfg = run.sub("cfg.json");
  write_tiny_config(cfg);
  REQUIRE(run_cli({"train", "--data", data.str(), "--config", cfg, "--out", run.sub("out"),
                   "--epochs", "1"}) == 0);
  CHECK(run_cli({"demo", "--ckpt", run.sub("out") + "/model.dmmb", "--clip",
                 data.sub("clip_0000.mvc"), "--out", run.sub("imgs")}) == 0);
  for (const char* name : {"degraded.ppm", "restored.ppm", "clean.ppm"}) {
    std::string head = slurp(run.sub("imgs") + "/" + name).substr(0, 12);
    CHECK(head.find("P6\n32 32") == 0);
  }
  // running twice overwrites deterministically
  auto before = slurp(run.sub("imgs") + "/restored.ppm");
  CHECK(run_cli({"demo", "--ckpt", run.sub("out") + "/model.dmmb", "--clip",
                 data.sub("clip_0000.mvc"), "--out", run.sub("imgs")}) == 0);
  CHECK(slurp(run.sub("imgs") + "/restored.ppm") == before);

  // the demo psnr agrees with an eval of the same clip
  std::string report = run.sub("report.json");
  REQUIRE(run_cli({"eval", "--ckpt", run.sub("out") + "/model.dmmb", "--data", data.str(), "--out",
                   report}) == 0);
  double eval_psnr = cli::load_json_file(report).at("clips").at(0).at("psnr");
  ModelConfig mcfg;
  cli::resolve_configs(cfg, "", &mcfg, nullptr);
  DemMamba<float> model(mcfg, 0);
  auto params = model.parameters();
  load_checkpoint(run.sub("out") + "/model.dmmb", params);
  auto clip = synth::read_clip(data.sub("clip_0000.mvc"));
  NoGradGuard ng;
  double demo_psnr = psnr(clamp01(model.forward(clip.raw)), cli::center_clean(clip));
  CHECK(std::fabs(demo_psnr - eval_psnr) <= 0.01);
}

TEST_CASE("bench emits the CSV contract and honors fault injection") {
  TempDir run("dm_cli_bench");
  std::string csv_path = run.sub("bench.csv");
  CHECK(run_cli({"bench", "--lengths", "256,512,1024", "--trials", "2", "--out", csv_path}) == 0);
  auto csv = slurp(csv_path);
  CHECK(csv.rfind("L,mean_seconds,slope\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(run_cli({"bench", "--lengths", "128", "--trials", "1", "--inject-fault"}) != 0);
}

TEST_CASE("missing or invalid arguments exit nonzero") {
  CHECK(run_cli({"train", "--out", "/tmp/nowhere"}) != 0);       // missing --data
  CHECK(run_cli({"gen", "--out", "/tmp/x", "--size", "64"}) != 0);  // malformed size
  CHECK(run_cli({"nonsense"}) != 0);
  CHECK(run_cli({"eval", "--ckpt", "/tmp/does_not_exist.dmmb", "--data", "/tmp"}) != 0);
}
