// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "demmamba/fft.hpp"
#include "demmamba/model.hpp"
#include "demmamba/synth.hpp"
#include "test_util.hpp"

using namespace demmamba;
using namespace demmamba::synth;
using test::max_abs_diff;

TEST_CASE("clean rendering is deterministic per seed") {
  auto a = render_clean(404, 3, 32, 32);
  auto b = render_clean(404, 3, 32, 32);
  CHECK(max_abs_diff(a, b) == 0.0);
  auto c = render_clean(405, 3, 32, 32);
  CHECK(max_abs_diff(a, c) > 0.0);
}

TEST_CASE("zero translation renders identical frames") {
  auto clip = render_clean(7, 3, 32, 32, 0.0);
  std::int64_t per = 3 * 32 * 32;
  for (std::int64_t t = 1; t < 3; ++t) {
    for (std::int64_t i = 0; i < per; ++i) {
      CHECK(clip.data()[t * per + i] == clip.data()[i]);
    }
  }
  auto moving = render_clean(7, 3, 32, 32, 1.0);
  bool differs = false;
  for (std::int64_t i = 0; i < per && !differs; ++i) {
    differs = moving.data()[per + i] != moving.data()[i];
  }
  CHECK(differs);
}

TEST_CASE("rendered values spread across the unit range") {
  auto clip = render_clean(11, 3, 64, 64);
  const int bins = 16;
  int hist[bins] = {0};
  for (std::int64_t i = 0; i < clip.numel(); ++i) {
    int b = std::min(bins - 1, static_cast<int>(clip.data()[i] * bins));
    ++hist[b];
  }
  int occupied = 0;
  for (int b = 0; b < bins; ++b) occupied += hist[b] > 0 ? 1 : 0;
  CHECK(occupied >= bins / 2);
}

TEST_CASE("zero amplitude leaves the clip untouched") {
  auto clean = render_clean(3, 3, 32, 32);
  MoireParams p;
  p.amplitude = 0.0;
  CHECK(max_abs_diff(apply_moire(clean, p), clean) == 0.0);
}

TEST_CASE("static gratings give a static pattern") {
  auto clean = render_clean(5, 3, 32, 32, 0.0);  // static frames
  MoireParams p;
  p.f1 = p.f2 = 0.2;
  p.theta1 = p.theta2 = 0.4;
  p.drift = 0.0;
  p.jitter = 0.0;
  p.amplitude = 0.25;
  auto degraded = apply_moire(clean, p);
  std::int64_t per = 3 * 32 * 32;
  for (std::int64_t t = 1; t < 3; ++t) {
    for (std::int64_t i = 0; i < per; ++i) {
      CHECK(degraded.data()[t * per + i] == degraded.data()[i]);
    }
  }
}

TEST_CASE("per-frame drift makes degraded frames differ while clean stays put") {
  auto clean = render_clean(13, 3, 32, 32, 0.0);
  MoireParams p;
  p.drift = 0.9;
  p.jitter = 0.0;
  p.amplitude = 0.3;
  auto degraded = apply_moire(clean, p);
  std::int64_t per = 3 * 32 * 32;
  double frame_diff = 0.0;
  for (std::int64_t i = 0; i < per; ++i) {
    frame_diff = std::max(frame_diff,
                          std::fabs(double(degraded.data()[per + i]) - double(degraded.data()[i])));
  }
  CHECK(frame_diff > 0.01);
}

TEST_CASE("beat spectrum lands at the sum and difference frequencies") {
  const std::int64_t h = 32, w = 32;
  const std::int64_t k1 = 9, k2 = 6;
  auto clean = Tensor<float>::full({1, 3, h, w}, 0.5f);
  MoireParams p;
  p.f1 = static_cast<double>(k1) / w;
  p.f2 = static_cast<double>(k2) / w;
  p.theta1 = p.theta2 = 0.0;
  p.jitter = 0.0;
  p.drift = 0.0;
  p.phase1 = 0.3;
  p.phase2 = 1.1;
  p.amplitude = 0.15;  // small enough to avoid clamping around mid gray
  p.gain_r = p.gain_g = p.gain_b = 1.0;
  auto degraded = apply_moire(clean, p);

  std::vector<float> diff(static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < h * w; ++i) {
    diff[static_cast<std::size_t>(i)] = degraded.data()[i] - clean.data()[i];
  }
  auto spec = rfft2(Tensor<float>::from_data(diff, {1, 1, h, w}));
  double total = 0.0, at_beats = 0.0;
  for (std::int64_t u = 0; u < h; ++u) {
    for (std::int64_t v = 0; v < spec.half_w(); ++v) {
      double e = spec.re(0, 0, u, v) * spec.re(0, 0, u, v) +
                 spec.im(0, 0, u, v) * spec.im(0, 0, u, v);
      total += e;
      if (u == 0 && (v == k1 - k2 || v == k1 + k2)) at_beats += e;
    }
  }
  CHECK(at_beats / total >= 0.99);
}

TEST_CASE("moire energy grows monotonically with amplitude") {
  auto clean = render_clean(17, 3, 32, 32);
  Rng rng(17 ^ 0x9e3779b9u);
  auto base = MoireParams::randomized(rng, 0.0);
  double prev = -1.0;
  for (double a : {0.1, 0.2, 0.35, 0.5}) {
    auto p = base;
    p.amplitude = a;
    auto degraded = apply_moire(clean, p);
    double energy = 0.0;
    for (std::int64_t i = 0; i < clean.numel(); ++i) {
      double d = degraded.data()[i] - clean.data()[i];
      energy += d * d;
    }
    CHECK(energy > prev);
    prev = energy;
  }
}

TEST_CASE("mosaic linearizes and samples the CFA") {
  auto gray = Tensor<float>::full({1, 3, 4, 4}, 0.5f);
  auto mosaic = mosaic_bayer(gray);
  float expected = static_cast<float>(std::pow(0.5, 2.2));
  for (std::int64_t i = 0; i < mosaic.numel(); ++i) {
    CHECK(mosaic.data()[i] == doctest::Approx(expected).epsilon(1e-6));
  }

  auto red = Tensor<float>::zeros({1, 3, 4, 4});
  for (std::int64_t i = 0; i < 16; ++i) red.data()[i] = 1.0f;  // R plane only
  auto red_mosaic = mosaic_bayer(red);
  for (std::int64_t y = 0; y < 4; ++y) {
    for (std::int64_t x = 0; x < 4; ++x) {
      float v = red_mosaic.data()[y * 4 + x];
      if (y % 2 == 0 && x % 2 == 0) {
        CHECK(v == 1.0f);
      } else {
        CHECK(v == 0.0f);
      }
    }
  }

  CHECK_THROWS_AS((void)mosaic_bayer(Tensor<float>::zeros({1, 3, 5, 4})), DimensionError);
}

TEST_CASE("packed channel means track the linearized scene means") {
  auto clean = render_clean(23, 1, 64, 64);
  auto mosaic = mosaic_bayer(clean);
  auto packed = pack_rggb(reshape(mosaic, {64, 64}));
  // linearized per-channel scene means
  double scene_mean[3] = {0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t i = 0; i < 64 * 64; ++i) {
      scene_mean[c] += srgb_to_linear(clean.data()[c * 64 * 64 + i]);
    }
    scene_mean[c] /= 64.0 * 64.0;
  }
  double ch_mean[4] = {0, 0, 0, 0};
  for (int ch = 0; ch < 4; ++ch) {
    for (std::int64_t i = 0; i < 32 * 32; ++i) ch_mean[ch] += packed.data()[ch * 32 * 32 + i];
    ch_mean[ch] /= 32.0 * 32.0;
  }
  CHECK(std::fabs(ch_mean[0] - scene_mean[0]) <= 0.05);
  CHECK(std::fabs(ch_mean[1] - scene_mean[1]) <= 0.05);
  CHECK(std::fabs(ch_mean[2] - scene_mean[1]) <= 0.05);
  CHECK(std::fabs(ch_mean[3] - scene_mean[2]) <= 0.05);
}

TEST_CASE("clip container round-trips bitwise") {
  auto clip = make_clip(31, 3, 64, 64, 0.3);
  const std::string path = "test_clip.mvc";
  write_clip(path, clip);
  auto back = read_clip(path);
  CHECK(max_abs_diff(back.raw, clip.raw) == 0.0);
  CHECK(max_abs_diff(back.clean, clip.clean) == 0.0);
  CHECK(back.seed == clip.seed);
  CHECK(back.params.f1 == clip.params.f1);
  CHECK(back.params.amplitude == clip.params.amplitude);

  SUBCASE("payload size arithmetic") {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    auto size = static_cast<std::uint64_t>(in.tellg());
    std::uint64_t header = 4 + 4 + 2 + 2 + 2 + 1;
    std::uint64_t payload = 4ull * (3 * 64 * 64 + 3 * 3 * 64 * 64);
    CHECK(size > header + payload + 4);
    std::uint64_t meta = size - header - payload - 4;
    CHECK(meta > 10);
    CHECK(meta < 4096);
  }
  SUBCASE("truncation raises a format error, not a crash") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    for (std::size_t keep : {std::size_t(3), bytes.size() / 3, bytes.size() - 2}) {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out.write(bytes.data(), static_cast<std::streamsize>(keep));
      out.close();
      CHECK_THROWS_AS((void)read_clip(path), FormatError);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    bytes[0] = 'Z';
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS((void)read_clip(path), FormatError);
  }
  std::remove(path.c_str());
}

TEST_CASE("zero-amplitude clips mosaic the clean scene exactly") {
  auto clip = make_clip(37, 3, 32, 32, 0.0);
  auto expected = mosaic_bayer(clip.clean);
  CHECK(max_abs_diff(clip.raw, expected) == 0.0);
}

TEST_CASE("bilinear demosaic recovers smooth scenes approximately") {
  auto clean = render_clean(41, 1, 32, 32);
  auto mosaic = mosaic_bayer(clean);
  auto rgb = demosaic_bilinear(reshape(mosaic, {32, 32}));
  CHECK(rgb.shape() == Shape{3, 32, 32});
  double err = 0.0;
  for (std::int64_t i = 0; i < rgb.numel(); ++i) {
    err += std::fabs(double(rgb.data()[i]) - double(clean.data()[i]));
  }
  err /= static_cast<double>(rgb.numel());
  CHECK(err < 0.08);  // rough but structurally right
}
