// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// The end-to-end restoration pipeline: RGGB packing, a shared shallow
// stride-2 conv per frame, stacked spatio-temporal Mamba groups with a
// global residual, per-frame fusion, and x4 sub-pixel reconstruction from
// quarter-resolution features back to full-resolution sRGB.

#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "demmamba/blocks.hpp"
#include "demmamba/io_util.hpp"

namespace demmamba {

enum class Ablation { full, no_afb, no_cab, all_smb, all_tmb };

inline std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_afb: return "no_afb";
    case Ablation::no_cab: return "no_cab";
    case Ablation::all_smb: return "all_smb";
    case Ablation::all_tmb: return "all_tmb";
  }
  return "full";
}

inline Ablation ablation_from_name(const std::string& s) {
  if (s == "full") return Ablation::full;
  if (s == "no_afb") return Ablation::no_afb;
  if (s == "no_cab") return Ablation::no_cab;
  if (s == "all_smb") return Ablation::all_smb;
  if (s == "all_tmb") return Ablation::all_tmb;
  throw UsageError("unknown ablation mode '" + s + "'");
}

struct ModelConfig {
  std::int64_t groups = 4;           // FASTMG count
  std::int64_t blocks_per_kind = 4;  // M: SMBs and TMBs per group
  std::int64_t frames = 3;           // T
  BlockConfig block;
  Ablation ablation = Ablation::full;

  void validate() const {
    require(groups >= 1 && blocks_per_kind >= 1, "model needs groups >= 1 and M >= 1");
    require(frames >= 1 && frames % 2 == 1, "frame count must be odd");
    block.validate();
  }
};

/// [T,H,W] Bayer mosaics -> [T,4,H/2,W/2] packed planes, channel order
/// R, G(row0), G(row1), B for the (0,0)=R phase.
template <typename T>
Tensor<T> pack_rggb(const Tensor<T>& bayer) {
  require(bayer.rank() == 2 || bayer.rank() == 3, "pack_rggb takes [H,W] or [T,H,W]");
  bool batched = bayer.rank() == 3;
  std::int64_t t = batched ? bayer.dim(0) : 1;
  std::int64_t h = bayer.dim(batched ? 1 : 0), w = bayer.dim(batched ? 2 : 1);
  require(h % 2 == 0 && w % 2 == 0, "pack_rggb needs even extents, got " + std::to_string(h) +
                                        "x" + std::to_string(w));
  auto v = reshape(bayer, {t, h / 2, 2, w / 2, 2});
  auto p = permute(v, {0, 2, 4, 1, 3});
  auto out = reshape(p, {t, 4, h / 2, w / 2});
  return batched ? out : reshape(out, {4, h / 2, w / 2});
}

/// Inverse of pack_rggb.
template <typename T>
Tensor<T> unpack_rggb(const Tensor<T>& packed) {
  require(packed.rank() == 3 || packed.rank() == 4, "unpack_rggb takes [4,H/2,W/2] or [T,4,...]");
  bool batched = packed.rank() == 4;
  std::int64_t t = batched ? packed.dim(0) : 1;
  std::int64_t h2 = packed.dim(batched ? 2 : 1), w2 = packed.dim(batched ? 3 : 2);
  auto v = reshape(packed, {t, 2, 2, h2, w2});
  auto p = permute(v, {0, 3, 1, 4, 2});
  auto out = reshape(p, {t, h2 * 2, w2 * 2});
  return batched ? out : reshape(out, {h2 * 2, w2 * 2});
}

/// One SMB or TMB applied to [B,T,C,h,w] features (SMBs run per frame).
template <typename T>
struct MixUnit {
  std::variant<Smb<T>, Tmb<T>> unit;

  Tensor<T> forward(const Tensor<T>& x5) const {
    if (std::holds_alternative<Smb<T>>(unit)) {
      std::int64_t b = x5.dim(0), t = x5.dim(1);
      auto frames = reshape(x5, {b * t, x5.dim(2), x5.dim(3), x5.dim(4)});
      return reshape(std::get<Smb<T>>(unit).forward(frames), x5.shape());
    }
    return std::get<Tmb<T>>(unit).forward(x5);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    if (std::holds_alternative<Smb<T>>(unit)) {
      std::get<Smb<T>>(unit).collect(prefix + ".smb", out);
    } else {
      std::get<Tmb<T>>(unit).collect(prefix + ".tmb", out);
    }
  }
};

/// Frequency-assisted spatio-temporal group: alternating SMB/TMB units, a
/// trailing 3x3 conv, and a group-level residual.
template <typename T>
struct Fastmg {
  std::vector<MixUnit<T>> units;
  Tensor<T> conv_w, conv_b;

  Fastmg() = default;
  Fastmg(const ModelConfig& cfg, Rng& rng) {
    for (std::int64_t m = 0; m < cfg.blocks_per_kind; ++m) {
      bool spatial_first = cfg.ablation != Ablation::all_tmb;
      bool temporal_second = cfg.ablation != Ablation::all_smb;
      if (spatial_first) {
        units.push_back({Smb<T>(cfg.block, cfg.ablation != Ablation::no_afb, rng)});
      } else {
        units.push_back({Tmb<T>(cfg.block, cfg.ablation != Ablation::no_cab, rng)});
      }
      if (temporal_second) {
        units.push_back({Tmb<T>(cfg.block, cfg.ablation != Ablation::no_cab, rng)});
      } else {
        units.push_back({Smb<T>(cfg.block, cfg.ablation != Ablation::no_afb, rng)});
      }
    }
    std::int64_t c = cfg.block.channels;
    conv_w = detail::init_weight<T>({c, c, 3, 3}, c * 9, rng);
    conv_b = detail::init_weight<T>({c}, c * 9, rng);
  }

  Tensor<T> forward(const Tensor<T>& x5) const {
    auto y = x5;
    for (const auto& u : units) y = u.forward(y);
    std::int64_t b = x5.dim(0), t = x5.dim(1);
    auto frames = reshape(y, {b * t, x5.dim(2), x5.dim(3), x5.dim(4)});
    auto conved = reshape(conv2d(frames, conv_w, conv_b, 1, 1), x5.shape());
    return add(x5, conved);
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& out) const {
    for (std::size_t i = 0; i < units.size(); ++i) {
      units[i].collect(prefix + ".u" + std::to_string(i), out);
    }
    out.push_back({prefix + ".conv.w", conv_w});
    out.push_back({prefix + ".conv.b", conv_b});
  }
};

template <typename T>
struct DemMamba {
  ModelConfig cfg;
  Tensor<T> shallow_w, shallow_b;
  std::vector<Fastmg<T>> groups;
  Tensor<T> fuse_w, fuse_b;
  Tensor<T> up1_w, up1_b, up2_w, up2_b, head_w, head_b;

  DemMamba() = default;
  DemMamba(const ModelConfig& cfg_, std::uint64_t seed) : cfg(cfg_) {
    cfg.validate();
    Rng rng(seed);
    std::int64_t c = cfg.block.channels;
    shallow_w = detail::init_weight<T>({c, 4, 3, 3}, 4 * 9, rng);
    shallow_b = detail::init_weight<T>({c}, 4 * 9, rng);
    for (std::int64_t g = 0; g < cfg.groups; ++g) groups.emplace_back(cfg, rng);
    fuse_w = detail::init_weight<T>({c, cfg.frames * c, 1, 1}, cfg.frames * c, rng);
    fuse_b = detail::init_weight<T>({c}, cfg.frames * c, rng);
    up1_w = detail::init_weight<T>({4 * c, c, 3, 3}, c * 9, rng);
    up1_b = detail::init_weight<T>({4 * c}, c * 9, rng);
    up2_w = detail::init_weight<T>({4 * c, c, 3, 3}, c * 9, rng);
    up2_b = detail::init_weight<T>({4 * c}, c * 9, rng);
    head_w = detail::init_weight<T>({3, c, 3, 3}, c * 9, rng);
    head_b = detail::init_weight<T>({3}, c * 9, rng);
  }

  /// Shared-weight stride-2 conv applied per frame: [T,4,H/2,W/2] -> [T,C,H/4,W/4].
  Tensor<T> shallow_extract(const Tensor<T>& packed) const {
    return conv2d(packed, shallow_w, shallow_b, 2, 1);
  }

  /// [T,H,W] raw mosaics -> [3,H,W] restored sRGB for the center frame.
  /// Output is unclamped; clamp to [0,1] only when evaluating.
  Tensor<T> forward(const Tensor<T>& raw) const {
    require(raw.rank() == 3, "forward input must be [T,H,W]");
    require(raw.dim(0) == cfg.frames, "expected " + std::to_string(cfg.frames) + " frames, got " +
                                          std::to_string(raw.dim(0)));
    std::int64_t h = raw.dim(1), w = raw.dim(2);
    require(h % 4 == 0 && w % 4 == 0, "spatial extents must be divisible by 4");
    std::int64_t c = cfg.block.channels, t = cfg.frames;

    auto packed = pack_rggb(raw);
    auto f0 = shallow_extract(packed);  // [T,C,h,w]
    std::int64_t fh = f0.dim(2), fw = f0.dim(3);

    auto x5 = reshape(f0, {1, t, c, fh, fw});
    for (const auto& g : groups) x5 = g.forward(x5);
    x5 = add(x5, reshape(f0, {1, t, c, fh, fw}));  // global residual

    auto fused = conv2d(reshape(x5, {1, t * c, fh, fw}), fuse_w, fuse_b);
    auto y = pixel_shuffle(conv2d(fused, up1_w, up1_b, 1, 1), 2);
    y = pixel_shuffle(conv2d(y, up2_w, up2_b, 1, 1), 2);
    y = conv2d(y, head_w, head_b, 1, 1);
    return reshape(y, {3, h, w});
  }

  std::vector<NamedTensor<T>> parameters() const {
    std::vector<NamedTensor<T>> out;
    out.push_back({"shallow.w", shallow_w});
    out.push_back({"shallow.b", shallow_b});
    for (std::size_t g = 0; g < groups.size(); ++g) {
      groups[g].collect("group" + std::to_string(g), out);
    }
    out.push_back({"fuse.w", fuse_w});
    out.push_back({"fuse.b", fuse_b});
    out.push_back({"up1.w", up1_w});
    out.push_back({"up1.b", up1_b});
    out.push_back({"up2.w", up2_w});
    out.push_back({"up2.b", up2_b});
    out.push_back({"head.w", head_w});
    out.push_back({"head.b", head_b});
    return out;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic "DMMB", version u32, parameter count u64, then
// per parameter { name_len u16, name, rank u8, extents u32 each, f32 data }.

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::string& path, const std::vector<NamedTensor<T>>& params) {
  io::Writer w(path);
  w.str("DMMB");
  w.u32(kCheckpointVersion);
  w.u64(static_cast<std::uint64_t>(params.size()));
  for (const auto& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.str(p.name);
    w.u8(static_cast<std::uint8_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
      w.f32(static_cast<float>(p.tensor.data()[i]));
    }
  }
  w.close();
}

/// Loads a checkpoint into an existing parameter list.  Mismatched names or
/// shapes name the offending parameter.
template <typename T>
void load_checkpoint(const std::string& path, std::vector<NamedTensor<T>>& params) {
  io::Reader r(path);
  std::uint64_t magic_at = r.offset();
  if (r.str(4) != "DMMB") throw FormatError("bad checkpoint magic", magic_at);
  std::uint64_t ver_at = r.offset();
  std::uint32_t ver = r.u32();
  if (ver != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(ver), ver_at);
  }
  std::uint64_t count = r.u64();
  if (count != params.size()) {
    throw UsageError("checkpoint holds " + std::to_string(count) + " parameters but the model has " +
                     std::to_string(params.size()) + " (config mismatch)");
  }
  for (auto& p : params) {
    std::uint16_t nlen = r.u16();
    std::string name = r.str(nlen);
    if (name != p.name) {
      throw UsageError("checkpoint parameter '" + name + "' does not match model parameter '" +
                       p.name + "' (config mismatch)");
    }
    std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::int64_t>(r.u32());
    if (shape != p.tensor.shape()) {
      throw UsageError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                       " but the model expects " + shape_str(p.tensor.shape()) +
                       " (config mismatch)");
    }
    for (std::int64_t i = 0; i < p.tensor.numel(); ++i) {
      p.tensor.data()[i] = static_cast<T>(r.f32());
    }
  }
}

}  // namespace demmamba
