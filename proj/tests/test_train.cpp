// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "demmamba/grad_check.hpp"
#include "demmamba/train.hpp"
#include "test_util.hpp"

using namespace demmamba;
using test::max_abs_diff;
using test::random_tensor;

TEST_CASE("loss vanishes iff prediction equals ground truth") {
  FeatureExtractor<float> fx;
  Rng rng(3);
  auto gt = random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0);
  CHECK(loss_total(gt, gt, fx).item() == doctest::Approx(0.0));

  auto off = add(gt, Tensor<float>::full(gt.shape(), 0.1f));
  CHECK(loss_total(off, gt, fx, 1.0, 0.0).item() == doctest::Approx(0.1f).epsilon(1e-5));

  auto noisy = add(gt, random_tensor<float>(gt.shape(), rng, -0.2, 0.2));
  CHECK(loss_total(noisy, gt, fx).item() > 0.0f);
}

TEST_CASE("loss gradients pass finite differences") {
  FeatureExtractor<double> fx;
  Rng rng(5);
  auto gt = random_tensor<double>({3, 8, 8}, rng, 0.2, 0.8);
  auto pred0 = random_tensor<double>({3, 8, 8}, rng, 0.2, 0.8);
  double err = grad_check([&](Tensor<double> t) { return loss_total(t, gt, fx); }, pred0, 1e-5);
  CHECK(err <= 1e-3);
}

TEST_CASE("feature extractor is frozen and reproducible") {
  FeatureExtractor<float> a(977), b(977), c(978);
  for (std::size_t s = 0; s < a.ws.size(); ++s) {
    CHECK(max_abs_diff(a.ws[s], b.ws[s]) == 0.0);
    CHECK(a.ws[s].requires_grad() == false);
  }
  CHECK(max_abs_diff(a.ws[0], c.ws[0]) > 0.0);
}

TEST_CASE("adamw closed-form single-step behaviors") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;

  SUBCASE("zero gradient leaves parameters untouched") {
    auto p = Tensor<float>::from_data({1.0f, -2.0f, 3.0f}, {3}, true);
    AdamW<float> opt({p}, cfg);
    opt.zero_grad();
    opt.step(1e-3);
    CHECK(p.data()[0] == 1.0f);
    CHECK(p.data()[1] == -2.0f);
    CHECK(p.data()[2] == 3.0f);
  }
  SUBCASE("first step size is lr times the gradient sign") {
    auto p = Tensor<float>::from_data({1.0f, 1.0f}, {2}, true);
    AdamW<float> opt({p}, cfg);
    opt.zero_grad();
    p.grad()[0] = 0.37f;
    p.grad()[1] = -5.2f;
    opt.step(1e-2);
    CHECK(p.data()[0] == doctest::Approx(1.0f - 1e-2f).epsilon(1e-4));
    CHECK(p.data()[1] == doctest::Approx(1.0f + 1e-2f).epsilon(1e-4));
  }
  SUBCASE("decoupled decay scales parameters with zero gradients") {
    auto cfg_wd = cfg;
    cfg_wd.weight_decay = 0.1;
    auto p = Tensor<float>::from_data({2.0f}, {1}, true);
    AdamW<float> opt({p}, cfg_wd);
    opt.zero_grad();
    opt.step(1e-2);
    CHECK(p.data()[0] == doctest::Approx(2.0f * (1.0f - 1e-2f * 0.1f)).epsilon(1e-6));
  }
}

TEST_CASE("multistep schedule decays at milestones and never increases") {
  TrainConfig cfg;  // lr0 4e-4, milestones {30,40}, decay 0.5
  CHECK(multistep_lr(0, cfg) == doctest::Approx(4e-4));
  CHECK(multistep_lr(29, cfg) == doctest::Approx(4e-4));
  CHECK(multistep_lr(35, cfg) == doctest::Approx(2e-4));
  CHECK(multistep_lr(45, cfg) == doctest::Approx(1e-4));
  double prev = 1.0;
  for (int e = 0; e < 60; ++e) {
    double lr = multistep_lr(e, cfg);
    CHECK(lr <= prev);
    prev = lr;
  }
  TrainConfig bad;
  bad.milestones = {10, 10};
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("psnr closed forms") {
  Rng rng(7);
  auto a = random_tensor<float>({3, 8, 8}, rng, 0.0, 1.0);
  CHECK(psnr(a, a) == doctest::Approx(100.0));

  auto b = add(a, Tensor<float>::full(a.shape(), 1.0f / 255.0f));
  CHECK(psnr(a, b) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-4));

  auto c = add(a, Tensor<float>::full(a.shape(), 0.1f));  // MSE 0.01
  CHECK(psnr(a, c) == doctest::Approx(20.0).epsilon(1e-4));

  double prev = 1e9;
  for (double amp : {0.01, 0.03, 0.1, 0.3}) {
    Rng noise_rng(99);
    auto noisy = add(a, random_tensor<float>(a.shape(), noise_rng, -amp, amp));
    double v = psnr(a, noisy);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("ssim identities and symmetry") {
  Rng rng(11);
  auto a = random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0);
  CHECK(ssim(a, a) == 1.0);

  auto b = random_tensor<float>({3, 16, 16}, rng, 0.0, 1.0);
  CHECK(std::fabs(ssim(a, b) - ssim(b, a)) <= 1e-9);

  // high-contrast pattern against its negative
  std::vector<float> checker(16 * 16);
  for (std::int64_t i = 0; i < 16; ++i) {
    for (std::int64_t j = 0; j < 16; ++j) {
      checker[static_cast<std::size_t>(i * 16 + j)] = ((i / 2 + j / 2) % 2 == 0) ? 1.0f : 0.0f;
    }
  }
  auto pat = Tensor<float>::from_data(checker, {16, 16});
  auto inv = sub(Tensor<float>::full({16, 16}, 1.0f), pat);
  CHECK(ssim(pat, inv) < 0.5);

  CHECK_THROWS_AS((void)ssim(Tensor<float>::zeros({8, 8}), Tensor<float>::zeros({8, 8})),
                  DimensionError);
}

TEST_CASE("a tiny model overfits a fixed clip: smoothed loss decreases over 200 steps") {
  ModelConfig mcfg;
  mcfg.groups = 1;
  mcfg.blocks_per_kind = 1;
  mcfg.block.channels = 8;
  mcfg.block.state_size = 4;
  DemMamba<float> model(mcfg, 11);

  TrainConfig tcfg;
  tcfg.batch_size = 1;
  tcfg.seed = 3;
  tcfg.milestones = {};
  Trainer<float> trainer(model, tcfg);

  std::vector<synth::ClipData> clips;
  clips.push_back(synth::make_clip(5, 3, 32, 32, 0.3));

  std::vector<double> losses;
  trainer.run(clips, 200, 200, [&](const StepRecord& r) { losses.push_back(r.loss); },
              [](std::int64_t) {});
  REQUIRE(losses.size() == 200);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 20; ++i) {
    head += losses[static_cast<std::size_t>(i)];
    tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(tail < head);
}

TEST_CASE("bench_scan emits ascending rows with a fitted slope") {
  auto rows = bench_scan({256, 512, 1024}, 2);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.mean_seconds > 0.0);
    CHECK(r.slope == rows[0].slope);
  }
  CHECK_THROWS_AS((void)bench_scan({512, 256}, 2), DimensionError);

  std::string err;
  auto bad = bench_scan({64}, 1, true, &err);
  CHECK(bad.empty());
  CHECK(err.find("mismatch") != std::string::npos);
}
