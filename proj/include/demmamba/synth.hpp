// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-contained clip synthesis: procedural clean scenes with sub-pixel
// camera drift, a two-grating beat model for moire contamination, RGGB
// mosaicking with gamma linearization, and the binary clip container.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "demmamba/common.hpp"
#include "demmamba/io_util.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba::synth {

constexpr double kPi = 3.141592653589793238462643;
constexpr double kGamma = 2.2;

inline double srgb_to_linear(double v) { return std::pow(std::max(v, 0.0), kGamma); }
inline double linear_to_srgb(double v) { return std::pow(std::max(v, 0.0), 1.0 / kGamma); }

/// Two-grating interference parameters.  The product of the gratings beats
/// at the difference frequency, giving the wavy low-frequency bands.
struct MoireParams {
  double f1 = 0.18, f2 = 0.15;          // cycles/pixel, below Nyquist
  double theta1 = 0.35, theta2 = 0.15;  // grating orientations (radians)
  double amplitude = 0.3;               // a in [0,1]
  double phase1 = 0.0, phase2 = 0.0;
  double drift = 0.8;     // per-frame phase advance (radians)
  double jitter = 0.015;  // per-frame orientation jitter (radians)
  double gain_r = 1.0, gain_g = 0.75, gain_b = 0.9;

  void validate() const {
    if (!(f1 > 0.0 && f1 < 0.5 && f2 > 0.0 && f2 < 0.5)) {
      throw DomainError("grating frequencies must lie in (0, 0.5) cycles/pixel");
    }
    if (!(amplitude >= 0.0 && amplitude <= 1.0)) {
      throw DomainError("moire amplitude must lie in [0,1]");
    }
  }

  nlohmann::json to_json() const {
    return {{"f1", f1},         {"f2", f2},        {"theta1", theta1}, {"theta2", theta2},
            {"amplitude", amplitude}, {"phase1", phase1}, {"phase2", phase2}, {"drift", drift},
            {"jitter", jitter}, {"gain_r", gain_r}, {"gain_g", gain_g}, {"gain_b", gain_b}};
  }
  static MoireParams from_json(const nlohmann::json& j) {
    MoireParams p;
    p.f1 = j.at("f1");
    p.f2 = j.at("f2");
    p.theta1 = j.at("theta1");
    p.theta2 = j.at("theta2");
    p.amplitude = j.at("amplitude");
    p.phase1 = j.at("phase1");
    p.phase2 = j.at("phase2");
    p.drift = j.at("drift");
    p.jitter = j.at("jitter");
    p.gain_r = j.at("gain_r");
    p.gain_g = j.at("gain_g");
    p.gain_b = j.at("gain_b");
    return p;
  }

  /// Randomized instance in the beat-pattern regime.
  static MoireParams randomized(Rng& rng, double amplitude) {
    MoireParams p;
    p.f1 = rng.uniform(0.12, 0.3);
    p.f2 = p.f1 + rng.uniform(-0.04, 0.04);
    p.f2 = std::min(0.45, std::max(0.05, p.f2));
    p.theta1 = rng.uniform(-1.2, 1.2);
    p.theta2 = p.theta1 + rng.uniform(-0.3, 0.3);
    p.amplitude = amplitude;
    p.phase1 = rng.uniform(0.0, 2.0 * kPi);
    p.phase2 = rng.uniform(0.0, 2.0 * kPi);
    p.drift = rng.uniform(0.3, 1.2);
    p.jitter = rng.uniform(0.0, 0.03);
    p.gain_r = rng.uniform(0.7, 1.0);
    p.gain_g = rng.uniform(0.5, 0.9);
    p.gain_b = rng.uniform(0.6, 1.0);
    return p;
  }
};

namespace detail {

struct SoftRect {
  double cx, cy, rx, ry, rot, edge;
  double color[3];
  double coverage(double x, double y) const {
    double dx = x - cx, dy = y - cy;
    double u = dx * std::cos(rot) + dy * std::sin(rot);
    double v = -dx * std::sin(rot) + dy * std::cos(rot);
    auto soft = [](double d, double e) { return 1.0 / (1.0 + std::exp(-d / e)); };
    return soft(rx - std::fabs(u), edge) * soft(ry - std::fabs(v), edge);
  }
};

struct Scene {
  double base[3][4];    // per-channel affine+sine background coefficients
  double base_freq[2];  // background sine frequency
  std::vector<SoftRect> rects;
  double vx, vy;  // per-frame sub-pixel translation

  double sample(int ch, double x, double y, std::int64_t w, std::int64_t h) const {
    const double* b = base[ch];
    double v = b[0] + b[1] * x / static_cast<double>(w) + b[2] * y / static_cast<double>(h) +
               b[3] * std::sin(2.0 * kPi * (base_freq[0] * x / w + base_freq[1] * y / h));
    for (const auto& r : rects) {
      double cov = r.coverage(x, y);
      v = v * (1.0 - cov) + r.color[ch] * cov;
    }
    return std::min(1.0, std::max(0.0, v));
  }
};

inline Scene make_scene(Rng& rng, std::int64_t h, std::int64_t w) {
  Scene s;
  for (int c = 0; c < 3; ++c) {
    s.base[c][0] = rng.uniform(0.25, 0.7);
    s.base[c][1] = rng.uniform(-0.25, 0.25);
    s.base[c][2] = rng.uniform(-0.25, 0.25);
    s.base[c][3] = rng.uniform(0.02, 0.12);
  }
  s.base_freq[0] = rng.uniform(0.5, 2.0);
  s.base_freq[1] = rng.uniform(0.5, 2.0);
  std::int64_t n_rects = 3 + rng.uniform_int(3);
  for (std::int64_t i = 0; i < n_rects; ++i) {
    SoftRect r;
    r.cx = rng.uniform(0.1, 0.9) * static_cast<double>(w);
    r.cy = rng.uniform(0.1, 0.9) * static_cast<double>(h);
    r.rx = rng.uniform(0.08, 0.3) * static_cast<double>(w);
    r.ry = rng.uniform(0.08, 0.3) * static_cast<double>(h);
    r.rot = rng.uniform(-0.5, 0.5);
    r.edge = rng.uniform(1.0, 2.5);
    for (int c = 0; c < 3; ++c) r.color[c] = rng.uniform(0.05, 0.95);
    s.rects.push_back(r);
  }
  // thin text-like strokes
  std::int64_t n_strokes = 2 + rng.uniform_int(3);
  for (std::int64_t i = 0; i < n_strokes; ++i) {
    SoftRect r;
    r.cx = rng.uniform(0.15, 0.85) * static_cast<double>(w);
    r.cy = rng.uniform(0.15, 0.85) * static_cast<double>(h);
    r.rx = rng.uniform(0.1, 0.35) * static_cast<double>(w);
    r.ry = rng.uniform(0.9, 1.8);
    r.rot = rng.uniform(-1.2, 1.2);
    r.edge = rng.uniform(0.8, 1.2);
    double shade = rng.uniform(0.02, 0.25);
    for (int c = 0; c < 3; ++c) r.color[c] = shade;
    s.rects.push_back(r);
  }
  s.vx = rng.uniform(-0.7, 0.7);
  s.vy = rng.uniform(-0.7, 0.7);
  return s;
}

}  // namespace detail

/// Procedural sRGB clip: smooth gradients, soft rectangles, thin strokes,
/// and a global sub-pixel translation per frame.  Deterministic per seed.
/// translation_scale 0 renders identical frames.
inline Tensor<float> render_clean(std::uint64_t seed, std::int64_t t, std::int64_t h,
                                  std::int64_t w, double translation_scale = 1.0) {
  require(t >= 1 && h >= 1 && w >= 1, "render_clean extents must be positive");
  Rng rng(seed);
  auto scene = detail::make_scene(rng, h, w);
  auto out = Tensor<float>::zeros({t, 3, h, w});
  float* p = out.data();
  double t_center = static_cast<double>(t - 1) / 2.0;
  for (std::int64_t f = 0; f < t; ++f) {
    double dx = scene.vx * (static_cast<double>(f) - t_center) * translation_scale;
    double dy = scene.vy * (static_cast<double>(f) - t_center) * translation_scale;
    for (int c = 0; c < 3; ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
          p[((f * 3 + c) * h + y) * w + x] =
              static_cast<float>(scene.sample(c, static_cast<double>(x) - dx,
                                              static_cast<double>(y) - dy, w, h));
        }
      }
    }
  }
  return out;
}

/// Additive-then-clamp beat-pattern contamination.  amplitude 0 returns the
/// input exactly.
inline Tensor<float> apply_moire(const Tensor<float>& clean, const MoireParams& p) {
  require(clean.rank() == 4 && clean.dim(1) == 3, "apply_moire input must be [T,3,H,W]");
  p.validate();
  std::int64_t t = clean.dim(0), h = clean.dim(2), w = clean.dim(3);
  auto out = Tensor<float>::zeros(clean.shape());
  if (p.amplitude == 0.0) {
    std::copy(clean.data(), clean.data() + clean.numel(), out.data());
    return out;
  }
  const float* src = clean.data();
  float* dst = out.data();
  const double gains[3] = {p.gain_r, p.gain_g, p.gain_b};
  double t_center = static_cast<double>(t - 1) / 2.0;
  for (std::int64_t f = 0; f < t; ++f) {
    double rel = static_cast<double>(f) - t_center;
    double th1 = p.theta1 + p.jitter * rel;
    double th2 = p.theta2 + p.jitter * rel;
    double ph1 = p.phase1 + p.drift * static_cast<double>(f);
    double ph2 = p.phase2 + p.drift * static_cast<double>(f);
    double c1 = std::cos(th1), s1 = std::sin(th1);
    double c2 = std::cos(th2), s2 = std::sin(th2);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double u1 = x * c1 + y * s1;
        double u2 = x * c2 + y * s2;
        double m = p.amplitude * std::cos(2.0 * kPi * p.f1 * u1 + ph1) *
                   std::cos(2.0 * kPi * p.f2 * u2 + ph2);
        for (int c = 0; c < 3; ++c) {
          double v = src[((f * 3 + c) * h + y) * w + x] + gains[c] * m;
          dst[((f * 3 + c) * h + y) * w + x] =
              static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
      }
    }
  }
  return out;
}

/// Samples the RGGB color filter array from a linearized scene:
/// (0,0)=R, (0,1)=G, (1,0)=G, (1,1)=B.
inline Tensor<float> mosaic_bayer(const Tensor<float>& scene) {
  require(scene.rank() == 4 && scene.dim(1) == 3, "mosaic_bayer input must be [T,3,H,W]");
  std::int64_t t = scene.dim(0), h = scene.dim(2), w = scene.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "mosaic_bayer needs even extents");
  auto out = Tensor<float>::zeros({t, h, w});
  const float* src = scene.data();
  float* dst = out.data();
  for (std::int64_t f = 0; f < t; ++f) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        int ch = (y % 2 == 0) ? (x % 2 == 0 ? 0 : 1) : (x % 2 == 0 ? 1 : 2);
        double v = src[((f * 3 + ch) * h + y) * w + x];
        dst[(f * h + y) * w + x] = static_cast<float>(srgb_to_linear(v));
      }
    }
  }
  return out;
}

/// Bilinear demosaic of one RGGB mosaic back to gamma-encoded sRGB; the
/// naive view of what the sensor captured.
inline Tensor<float> demosaic_bilinear(const Tensor<float>& mosaic) {
  require(mosaic.rank() == 2, "demosaic_bilinear takes one [H,W] mosaic");
  std::int64_t h = mosaic.dim(0), w = mosaic.dim(1);
  auto out = Tensor<float>::zeros({3, h, w});
  const float* m = mosaic.data();
  auto at = [&](std::int64_t y, std::int64_t x) {
    y = std::min(h - 1, std::max<std::int64_t>(0, y));
    x = std::min(w - 1, std::max<std::int64_t>(0, x));
    return static_cast<double>(m[y * w + x]);
  };
  auto cfa = [&](std::int64_t y, std::int64_t x) {
    return (y % 2 == 0) ? (x % 2 == 0 ? 0 : 1) : (x % 2 == 0 ? 1 : 2);
  };
  float* q = out.data();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      double rgb[3];
      int c0 = cfa(y, x);
      rgb[c0] = at(y, x);
      if (c0 == 1) {
        bool r_row = y % 2 == 0;  // red sits on even rows
        double horiz = 0.5 * (at(y, x - 1) + at(y, x + 1));
        double vert = 0.5 * (at(y - 1, x) + at(y + 1, x));
        rgb[0] = r_row ? horiz : vert;
        rgb[2] = r_row ? vert : horiz;
      } else {
        rgb[1] = 0.25 * (at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1));
        double diag = 0.25 * (at(y - 1, x - 1) + at(y - 1, x + 1) + at(y + 1, x - 1) +
                              at(y + 1, x + 1));
        rgb[c0 == 0 ? 2 : 0] = diag;
      }
      for (int c = 0; c < 3; ++c) {
        q[(c * h + y) * w + x] = static_cast<float>(
            std::min(1.0, std::max(0.0, linear_to_srgb(rgb[c]))));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clip container: magic "MVC1", version u32, T u16, H u16, W u16, flags u8,
// raw T*H*W f32, clean T*3*H*W f32, u32 length-prefixed JSON metadata.

struct ClipData {
  Tensor<float> raw;    // [T,H,W] linear-domain mosaics
  Tensor<float> clean;  // [T,3,H,W] sRGB ground truth
  MoireParams params;
  std::uint64_t seed = 0;
};

inline constexpr std::uint32_t kClipVersion = 1;

inline void write_clip(const std::string& path, const ClipData& clip) {
  require(clip.raw.rank() == 3, "clip raw must be [T,H,W]");
  require(clip.clean.rank() == 4 && clip.clean.dim(1) == 3, "clip clean must be [T,3,H,W]");
  std::int64_t t = clip.raw.dim(0), h = clip.raw.dim(1), w = clip.raw.dim(2);
  require(clip.clean.dim(0) == t && clip.clean.dim(2) == h && clip.clean.dim(3) == w,
          "clip raw/clean extents disagree");
  io::Writer out(path);
  out.str("MVC1");
  out.u32(kClipVersion);
  out.u16(static_cast<std::uint16_t>(t));
  out.u16(static_cast<std::uint16_t>(h));
  out.u16(static_cast<std::uint16_t>(w));
  out.u8(0);  // flags, reserved
  out.f32_array(clip.raw.data(), static_cast<std::size_t>(clip.raw.numel()));
  out.f32_array(clip.clean.data(), static_cast<std::size_t>(clip.clean.numel()));
  nlohmann::json meta = {{"moire", clip.params.to_json()}, {"seed", clip.seed}};
  std::string meta_str = meta.dump();
  out.u32(static_cast<std::uint32_t>(meta_str.size()));
  out.str(meta_str);
  out.close();
}

inline ClipData read_clip(const std::string& path) {
  io::Reader in(path);
  std::uint64_t at = in.offset();
  if (in.str(4) != "MVC1") throw FormatError("bad clip magic in '" + path + "'", at);
  at = in.offset();
  std::uint32_t ver = in.u32();
  if (ver != kClipVersion) throw FormatError("unsupported clip version " + std::to_string(ver), at);
  std::int64_t t = in.u16(), h = in.u16(), w = in.u16();
  (void)in.u8();
  if (t < 1 || h < 2 || w < 2) throw FormatError("degenerate clip header", in.offset());
  ClipData clip;
  clip.raw = Tensor<float>::zeros({t, h, w});
  in.f32_array(clip.raw.data(), static_cast<std::size_t>(clip.raw.numel()));
  clip.clean = Tensor<float>::zeros({t, 3, h, w});
  in.f32_array(clip.clean.data(), static_cast<std::size_t>(clip.clean.numel()));
  std::uint32_t meta_len = in.u32();
  at = in.offset();
  std::string meta_str = in.str(meta_len);
  try {
    auto meta = nlohmann::json::parse(meta_str);
    clip.params = MoireParams::from_json(meta.at("moire"));
    clip.seed = meta.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad clip metadata: ") + e.what(), at);
  }
  return clip;
}

/// Full synthesis: clean frames, beat-pattern degradation, mosaic capture.
inline ClipData make_clip(std::uint64_t seed, std::int64_t t, std::int64_t h, std::int64_t w,
                          double amplitude) {
  ClipData clip;
  clip.seed = seed;
  clip.clean = render_clean(seed, t, h, w);
  Rng rng(seed ^ 0x9e3779b9u);
  clip.params = MoireParams::randomized(rng, amplitude);
  clip.raw = mosaic_bayer(apply_moire(clip.clean, clip.params));
  return clip;
}

}  // namespace demmamba::synth
