// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Network blocks: the two-branch spatial Mamba with a four-direction 2-D
// scan, the adaptive frequency gate, the bidirectional temporal Mamba, and
// channel attention, composed into the SMB and TMB units.

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "demmamba/common.hpp"
#include "demmamba/fft.hpp"
#include "demmamba/ops.hpp"
#include "demmamba/scan_layout.hpp"
#include "demmamba/ssm_autograd.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Per-block hyperparameters.
struct BlockConfig {
  std::int64_t channels = 48;    // C
  std::int64_t expand = 2;       // channel expansion factor
  std::int64_t state_size = 16;  // SSM state size N
  double alpha1 = 0.5;           // SMB frequency-branch weight
  double alpha2 = 0.5;           // TMB attention-branch weight
  std::int64_t gamma = 3;        // CAB squeeze factor
  std::int64_t dw_kernel = 3;
  std::int64_t ca_reduction = 4;

  std::int64_t d_inner() const { return channels * expand; }
  std::int64_t dt_rank() const { return (d_inner() + 15) / 16; }
  std::int64_t cab_hidden() const { return (channels + gamma - 1) / gamma; }  // ceil(C/gamma)

  void validate() const {
    require(channels >= 1 && expand >= 1 && state_size >= 1, "block config extents must be positive");
    require(gamma >= 1, "gamma must be >= 1");
    require(dw_kernel % 2 == 1, "depthwise kernel must be odd");
    require(alpha1 >= 0.0 && alpha1 <= 1.0 && alpha2 >= 0.0 && alpha2 <= 1.0,
            "fusion weights must lie in [0,1]");
  }
};

namespace detail {

template <typename T>
Tensor<T> init_weight(Shape shape, std::int64_t fan_in, Rng& rng) {
  return Tensor<T>::uniform(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(fan_in)),
                            true);
}

}  // namespace detail

/// 1x1 mixing over the channel axis of a [B,C,...] tensor.
template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  return channel_mix(x, w, b);
}

/// LayerNorm across the channel axis of a [B,C,...] tensor, per position.
template <typename T>
Tensor<T> ln_channels(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset,
                      T eps = T(1e-5)) {
  Shape s = x.shape();
  std::int64_t bsz = s[0], cin = s[1];
  std::int64_t pos = x.numel() / (bsz * cin);
  auto t = permute(reshape(x, {bsz, cin, pos}), {0, 2, 1});
  t = layer_norm(t, gain, offset, eps);
  return reshape(permute(t, {0, 2, 1}), s);
}

/// One scan direction's selective-SSM parameters and its sequence transform.
template <typename T>
struct SelectiveSsm {
  std::int64_t d_inner = 0, state = 0, dt_rank = 0;
  Tensor<T> x_proj_w;   // (dt_rank + 2N, d_inner)
  Tensor<T> dt_proj_w;  // (d_inner, dt_rank)
  Tensor<T> dt_proj_b;  // (d_inner)
  Tensor<T> a_log;      // (d_inner, N); A = -exp(a_log) keeps the system stable
  Tensor<T> d_skip;     // (d_inner)

  SelectiveSsm() = default;
  SelectiveSsm(const BlockConfig& cfg, Rng& rng)
      : d_inner(cfg.d_inner()), state(cfg.state_size), dt_rank(cfg.dt_rank()) {
    x_proj_w = detail::init_weight<T>({dt_rank + 2 * state, d_inner}, d_inner, rng);
    dt_proj_w = detail::init_weight<T>({d_inner, dt_rank}, dt_rank, rng);
    std::vector<T> db(static_cast<std::size_t>(d_inner));
    for (auto& v : db) {
      // softplus(b) lands log-uniformly in [1e-4, 1e-1]
      double dt = std::exp(rng.uniform(std::log(1e-4), std::log(1e-1)));
      v = static_cast<T>(std::log(std::expm1(dt)));
    }
    dt_proj_b = Tensor<T>::from_data(std::move(db), {d_inner}, true);
    std::vector<T> al(static_cast<std::size_t>(d_inner * state));
    for (std::int64_t c = 0; c < d_inner; ++c) {
      for (std::int64_t n = 0; n < state; ++n) {
        al[static_cast<std::size_t>(c * state + n)] = static_cast<T>(std::log(static_cast<double>(n + 1)));
      }
    }
    a_log = Tensor<T>::from_data(std::move(al), {d_inner, state}, true);
    d_skip = Tensor<T>::full({d_inner}, T(1), true);
  }

  /// seq: [B', d_inner, L] -> same shape.
  Tensor<T> run(const Tensor<T>& seq, bool steady_init = false) const {
    auto u = pointwise(seq, x_proj_w);
    auto dt = softplus(pointwise(slice_dim1(u, 0, dt_rank), dt_proj_w, dt_proj_b));
    auto bs = slice_dim1(u, dt_rank, state);
    auto cs = slice_dim1(u, dt_rank + state, state);
    auto a = scale(demmamba::exp(a_log), T(-1));
    return selective_scan_op(seq, dt, bs, cs, a, d_skip, steady_init);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".x_proj.w", x_proj_w});
    out.push_back({prefix + ".dt_proj.w", dt_proj_w});
    out.push_back({prefix + ".dt_proj.b", dt_proj_b});
    out.push_back({prefix + ".a_log", a_log});
    out.push_back({prefix + ".d", d_skip});
  }
};

/// Two-branch spatial mixer: expand -> depthwise conv -> SiLU -> four-way
/// 2-D selective scan -> LayerNorm, gated by a SiLU branch, projected back.
template <typename T>
struct SpatialMamba {
  BlockConfig cfg;
  Tensor<T> in_w, in_b, gate_w, gate_b, dw_w, dw_b, out_w, out_b, ln_g, ln_o;
  std::vector<SelectiveSsm<T>> dirs;  // one per scan direction

  SpatialMamba() = default;
  SpatialMamba(const BlockConfig& cfg_, Rng& rng) : cfg(cfg_) {
    std::int64_t c = cfg.channels, d = cfg.d_inner(), k = cfg.dw_kernel;
    in_w = detail::init_weight<T>({d, c}, c, rng);
    in_b = detail::init_weight<T>({d}, c, rng);
    gate_w = detail::init_weight<T>({d, c}, c, rng);
    gate_b = detail::init_weight<T>({d}, c, rng);
    dw_w = detail::init_weight<T>({d, 1, k, k}, k * k, rng);
    dw_b = detail::init_weight<T>({d}, k * k, rng);
    for (int i = 0; i < 4; ++i) dirs.emplace_back(cfg, rng);
    ln_g = Tensor<T>::full({d}, T(1), true);
    ln_o = Tensor<T>::zeros({d}, true);
    out_w = detail::init_weight<T>({c, d}, d, rng);
    out_b = detail::init_weight<T>({c}, d, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    std::int64_t h = x.dim(2), w = x.dim(3);
    auto b1 = pointwise(x, in_w, in_b);
    b1 = conv2d(b1, dw_w, dw_b, 1, cfg.dw_kernel / 2, cfg.d_inner());
    b1 = silu(b1);
    std::vector<Tensor<T>> outs;
    outs.reserve(4);
    for (int d = 1; d <= 4; ++d) {
      outs.push_back(dirs[static_cast<std::size_t>(d - 1)].run(scan2d_flatten(b1, d)));
    }
    auto mixed = ln_channels(scan2d_merge(outs, h, w), ln_g, ln_o);
    auto b2 = silu(pointwise(x, gate_w, gate_b));
    return pointwise(mul(mixed, b2), out_w, out_b);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".in.w", in_w});
    out.push_back({prefix + ".in.b", in_b});
    out.push_back({prefix + ".gate.w", gate_w});
    out.push_back({prefix + ".gate.b", gate_b});
    out.push_back({prefix + ".dw.w", dw_w});
    out.push_back({prefix + ".dw.b", dw_b});
    for (int d = 0; d < 4; ++d) {
      dirs[static_cast<std::size_t>(d)].collect(prefix + ".dir" + std::to_string(d + 1), out);
    }
    out.push_back({prefix + ".ln.g", ln_g});
    out.push_back({prefix + ".ln.o", ln_o});
    out.push_back({prefix + ".out.w", out_w});
    out.push_back({prefix + ".out.b", out_b});
  }
};

/// Applies a real per-bin gate to the half spectrum of x: both the real and
/// imaginary planes scale by the same factor, attenuating magnitude while
/// preserving phase.
template <typename T>
Tensor<T> apply_spectral_gate(const Tensor<T>& x, const Tensor<T>& gate) {
  auto spec = rfft2(x);
  require(gate.rank() == 4 && gate.dim(0) == spec.batch() && gate.dim(1) == spec.channels() &&
              gate.dim(2) == spec.height() && gate.dim(3) == spec.half_w(),
          "spectral gate must be [B,C,H,Wh]");
  auto g = reshape(gate, {gate.dim(0), gate.dim(1), 1, gate.dim(2), gate.dim(3)});
  return irfft2(mul(spec.planes, g), spec.width);
}

/// Adaptive frequency block: a learned sigmoid compressor over the stacked
/// real/imag half spectrum, applied as a band gate.
template <typename T>
struct Afb {
  Tensor<T> c1_w, c1_b;  // 1x1, 2C -> 2C
  Tensor<T> c2_w, c2_b;  // 3x3, 2C -> 2C
  Tensor<T> c3_w, c3_b;  // 1x1, 2C -> C

  Afb() = default;
  Afb(const BlockConfig& cfg, Rng& rng) {
    std::int64_t c2 = 2 * cfg.channels;
    c1_w = detail::init_weight<T>({c2, c2, 1, 1}, c2, rng);
    c1_b = detail::init_weight<T>({c2}, c2, rng);
    c2_w = detail::init_weight<T>({c2, c2, 3, 3}, c2 * 9, rng);
    c2_b = detail::init_weight<T>({c2}, c2 * 9, rng);
    c3_w = detail::init_weight<T>({cfg.channels, c2, 1, 1}, c2, rng);
    c3_b = detail::init_weight<T>({cfg.channels}, c2, rng);
  }

  /// Gate in (0,1) per (channel, frequency bin).
  Tensor<T> gate(const ComplexSpectrum<T>& spec) const {
    auto planes = spec.planes;
    std::int64_t b = spec.batch(), c = spec.channels(), h = spec.height(), wh = spec.half_w();
    auto stacked = reshape(planes, {b, 2 * c, h, wh});
    auto t = silu(conv2d(stacked, c1_w, c1_b));
    t = silu(conv2d(t, c2_w, c2_b, 1, 1));
    return sigmoid(conv2d(t, c3_w, c3_b));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto spec = rfft2(x);
    auto g = gate(spec);
    auto g5 = reshape(g, {g.dim(0), g.dim(1), 1, g.dim(2), g.dim(3)});
    return irfft2(mul(spec.planes, g5), spec.width);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".c1.w", c1_w});
    out.push_back({prefix + ".c1.b", c1_b});
    out.push_back({prefix + ".c2.w", c2_w});
    out.push_back({prefix + ".c2.b", c2_b});
    out.push_back({prefix + ".c3.w", c3_w});
    out.push_back({prefix + ".c3.b", c3_b});
  }
};

/// Spatial Mamba block: residual + spatial mixer + weighted frequency branch.
template <typename T>
struct Smb {
  SpatialMamba<T> sm;
  std::optional<Afb<T>> afb;
  T alpha1 = T(0.5);

  Smb() = default;
  Smb(const BlockConfig& cfg, bool use_afb, Rng& rng)
      : sm(cfg, rng), alpha1(static_cast<T>(cfg.alpha1)) {
    if (use_afb) afb.emplace(cfg, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = add(x, sm.forward(x));
    if (afb.has_value()) y = add(y, scale(afb->forward(x), alpha1));
    return y;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    sm.collect(prefix + ".sm", out);
    if (afb.has_value()) afb->collect(prefix + ".afb", out);
  }
};

/// Temporal mixer: per-site forward+backward selective scans over the frame
/// axis, same two-branch gating as the spatial mixer.
template <typename T>
struct TemporalMamba {
  BlockConfig cfg;
  Tensor<T> in_w, in_b, gate_w, gate_b, dw_w, dw_b, out_w, out_b, ln_g, ln_o;
  SelectiveSsm<T> fwd, bwd;

  TemporalMamba() = default;
  TemporalMamba(const BlockConfig& cfg_, Rng& rng) : cfg(cfg_) {
    std::int64_t c = cfg.channels, d = cfg.d_inner(), k = cfg.dw_kernel;
    in_w = detail::init_weight<T>({d, c}, c, rng);
    in_b = detail::init_weight<T>({d}, c, rng);
    gate_w = detail::init_weight<T>({d, c}, c, rng);
    gate_b = detail::init_weight<T>({d}, c, rng);
    dw_w = detail::init_weight<T>({d, 1, k, k}, k * k, rng);
    dw_b = detail::init_weight<T>({d}, k * k, rng);
    fwd = SelectiveSsm<T>(cfg, rng);
    bwd = SelectiveSsm<T>(cfg, rng);
    ln_g = Tensor<T>::full({d}, T(1), true);
    ln_o = Tensor<T>::zeros({d}, true);
    out_w = detail::init_weight<T>({c, d}, d, rng);
    out_b = detail::init_weight<T>({c}, d, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    require(x.rank() == 5, "temporal mamba input must be [B,T,C,H,W]");
    std::int64_t B = x.dim(0), Tn = x.dim(1), H = x.dim(3), W = x.dim(4);
    std::int64_t d = cfg.d_inner();
    auto xm = reshape(x, {B * Tn, x.dim(2), H, W});
    auto b1 = pointwise(xm, in_w, in_b);
    b1 = conv2d(b1, dw_w, dw_b, 1, cfg.dw_kernel / 2, d);
    b1 = silu(b1);
    auto b5 = reshape(b1, {B, Tn, d, H, W});

    Tensor<T> mixed;
    bool first = true;
    for (auto dir : {TemporalDir::forward, TemporalDir::backward}) {
      auto sites = temporal_flatten(b5, dir);  // [B,d,H,W,T]
      auto seq = reshape(permute(sites, {0, 2, 3, 1, 4}), {B * H * W, d, Tn});
      // steady-state start removes the cold-start transient on short clips
      auto out = (dir == TemporalDir::forward ? fwd : bwd).run(seq, true);
      auto back = temporal_unflatten(permute(reshape(out, {B, H, W, d, Tn}), {0, 3, 1, 2, 4}), dir);
      mixed = first ? back : add(mixed, back);
      first = false;
    }
    auto m = ln_channels(reshape(mixed, {B * Tn, d, H, W}), ln_g, ln_o);
    auto b2 = silu(pointwise(xm, gate_w, gate_b));
    auto out = pointwise(mul(m, b2), out_w, out_b);
    return reshape(out, x.shape());
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".in.w", in_w});
    out.push_back({prefix + ".in.b", in_b});
    out.push_back({prefix + ".gate.w", gate_w});
    out.push_back({prefix + ".gate.b", gate_b});
    out.push_back({prefix + ".dw.w", dw_w});
    out.push_back({prefix + ".dw.b", dw_b});
    fwd.collect(prefix + ".fwd", out);
    bwd.collect(prefix + ".bwd", out);
    out.push_back({prefix + ".ln.g", ln_g});
    out.push_back({prefix + ".ln.o", ln_o});
    out.push_back({prefix + ".out.w", out_w});
    out.push_back({prefix + ".out.b", out_b});
  }
};

/// Channel attention block: squeeze/expand 3x3 convs around a pooled
/// channel-gating path.
template <typename T>
struct Cab {
  Tensor<T> c1_w, c1_b;  // 3x3, C -> ceil(C/gamma)
  Tensor<T> c2_w, c2_b;  // 3x3, ceil(C/gamma) -> C
  Tensor<T> a1_w, a1_b;  // 1x1, C -> C/r
  Tensor<T> a2_w, a2_b;  // 1x1, C/r -> C

  Cab() = default;
  Cab(const BlockConfig& cfg, Rng& rng) {
    std::int64_t c = cfg.channels;
    std::int64_t hid = cfg.cab_hidden();
    std::int64_t red = std::max<std::int64_t>(1, c / cfg.ca_reduction);
    c1_w = detail::init_weight<T>({hid, c, 3, 3}, c * 9, rng);
    c1_b = detail::init_weight<T>({hid}, c * 9, rng);
    c2_w = detail::init_weight<T>({c, hid, 3, 3}, hid * 9, rng);
    c2_b = detail::init_weight<T>({c}, hid * 9, rng);
    a1_w = detail::init_weight<T>({red, c}, c, rng);
    a1_b = detail::init_weight<T>({red}, c, rng);
    a2_w = detail::init_weight<T>({c, red}, red, rng);
    a2_b = detail::init_weight<T>({c}, red, rng);
  }

  /// Attention scales in (0,1) for a given feature map.
  Tensor<T> attention(const Tensor<T>& f) const {
    auto pooled = mean_spatial(f);
    return sigmoid(pointwise(relu(pointwise(pooled, a1_w, a1_b)), a2_w, a2_b));
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto f = conv2d(x, c1_w, c1_b, 1, 1);
    f = gelu(f);
    f = conv2d(f, c2_w, c2_b, 1, 1);
    return mul(f, attention(f));
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    out.push_back({prefix + ".c1.w", c1_w});
    out.push_back({prefix + ".c1.b", c1_b});
    out.push_back({prefix + ".c2.w", c2_w});
    out.push_back({prefix + ".c2.b", c2_b});
    out.push_back({prefix + ".a1.w", a1_w});
    out.push_back({prefix + ".a1.b", a1_b});
    out.push_back({prefix + ".a2.w", a2_w});
    out.push_back({prefix + ".a2.b", a2_b});
  }
};

/// Temporal Mamba block: residual + temporal mixer + weighted per-frame
/// channel attention.
template <typename T>
struct Tmb {
  TemporalMamba<T> tm;
  std::optional<Cab<T>> cab;
  T alpha2 = T(0.5);

  Tmb() = default;
  Tmb(const BlockConfig& cfg, bool use_cab, Rng& rng)
      : tm(cfg, rng), alpha2(static_cast<T>(cfg.alpha2)) {
    if (use_cab) cab.emplace(cfg, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    auto y = add(x, tm.forward(x));
    if (cab.has_value()) {
      std::int64_t B = x.dim(0), Tn = x.dim(1);
      auto per_frame = cab->forward(reshape(x, {B * Tn, x.dim(2), x.dim(3), x.dim(4)}));
      y = add(y, scale(reshape(per_frame, x.shape()), alpha2));
    }
    return y;
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    tm.collect(prefix + ".tm", out);
    if (cab.has_value()) cab->collect(prefix + ".cab", out);
  }
};

}  // namespace demmamba
