// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Bijective flattenings between feature grids and scan sequences.  Spatial
// maps use the four-direction cross scan (row-major, reversed row-major,
// column-major, reversed column-major); temporal maps run per-site frame
// trajectories forward or backward.

#pragma once

#include <cstdint>
#include <vector>

#include "demmamba/common.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba {

enum class ScanKind { spatial2d, temporal };
enum class TemporalDir { forward, backward };

/// Permutation from scan position to row-major grid offset for one spatial
/// direction (1-4).
inline std::vector<std::int64_t> spatial_scan_order(int direction, std::int64_t h, std::int64_t w) {
  if (direction < 1 || direction > 4) {
    throw UsageError("spatial scan direction must be in 1..4, got " + std::to_string(direction));
  }
  require(h >= 1 && w >= 1, "spatial scan needs H,W >= 1");
  std::int64_t n = h * w;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  switch (direction) {
    case 1:  // top-left to bottom-right, row-major
      for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      break;
    case 2:  // bottom-right to top-left: reverse of 1
      for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = n - 1 - i;
      break;
    case 3:  // column-major
      for (std::int64_t c = 0, i = 0; c < w; ++c) {
        for (std::int64_t r = 0; r < h; ++r, ++i) order[static_cast<std::size_t>(i)] = r * w + c;
      }
      break;
    case 4:  // reverse of 3
      for (std::int64_t c = 0, i = 0; c < w; ++c) {
        for (std::int64_t r = 0; r < h; ++r, ++i) {
          order[static_cast<std::size_t>(n - 1 - i)] = r * w + c;
        }
      }
      break;
  }
  return order;
}

inline std::vector<std::int64_t> inverse_order(const std::vector<std::int64_t>& order) {
  std::vector<std::int64_t> inv(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    inv[static_cast<std::size_t>(order[i])] = static_cast<std::int64_t>(i);
  }
  return inv;
}

/// Direction-tagged bijection between a grid and a 1-D scan sequence.
struct ScanLayout {
  ScanKind kind = ScanKind::spatial2d;
  int direction = 1;  // 1..4 for spatial2d; ignored for temporal
  TemporalDir temporal_dir = TemporalDir::forward;
  std::int64_t h = 0, w = 0;  // spatial grid
  std::int64_t t = 0;         // temporal extent

  static ScanLayout spatial(int direction, std::int64_t h, std::int64_t w) {
    ScanLayout l;
    l.kind = ScanKind::spatial2d;
    l.direction = direction;
    l.h = h;
    l.w = w;
    (void)spatial_scan_order(direction, h, w);  // validates
    return l;
  }

  static ScanLayout temporal(TemporalDir dir, std::int64_t t) {
    require(t >= 1, "temporal scan needs T >= 1");
    ScanLayout l;
    l.kind = ScanKind::temporal;
    l.temporal_dir = dir;
    l.t = t;
    return l;
  }

  /// Scan-position -> source-offset permutation over the grid.
  std::vector<std::int64_t> order() const {
    if (kind == ScanKind::spatial2d) return spatial_scan_order(direction, h, w);
    std::vector<std::int64_t> o(static_cast<std::size_t>(t));
    for (std::int64_t i = 0; i < t; ++i) {
      o[static_cast<std::size_t>(i)] = temporal_dir == TemporalDir::forward ? i : t - 1 - i;
    }
    return o;
  }
};

/// [B,C,H,W] -> [B,C,H*W] sequence in the given direction.
template <typename T>
Tensor<T> scan2d_flatten(const Tensor<T>& feature, int direction) {
  require(feature.rank() == 4, "scan2d_flatten input must be [B,C,H,W]");
  std::int64_t b = feature.dim(0), c = feature.dim(1), h = feature.dim(2), w = feature.dim(3);
  auto order = spatial_scan_order(direction, h, w);
  return gather_last(reshape(feature, {b, c, h * w}), order);
}

/// Inverse of scan2d_flatten for one direction.
template <typename T>
Tensor<T> scan2d_unflatten(const Tensor<T>& seq, int direction, std::int64_t h, std::int64_t w) {
  require(seq.rank() == 3, "scan2d_unflatten input must be [B,C,L]");
  require(seq.dim(2) == h * w, "scan2d_unflatten length " + std::to_string(seq.dim(2)) +
                                   " does not match grid " + std::to_string(h) + "x" +
                                   std::to_string(w));
  auto inv = inverse_order(spatial_scan_order(direction, h, w));
  return reshape(gather_last(seq, inv), {seq.dim(0), seq.dim(1), h, w});
}

/// Unflattens each of the four direction sequences and sums them.
template <typename T>
Tensor<T> scan2d_merge(const std::vector<Tensor<T>>& outputs, std::int64_t h, std::int64_t w) {
  require(outputs.size() == 4, "scan2d_merge expects one sequence per direction");
  Tensor<T> acc;
  for (int d = 1; d <= 4; ++d) {
    auto part = scan2d_unflatten(outputs[static_cast<std::size_t>(d - 1)], d, h, w);
    acc = d == 1 ? part : add(acc, part);
  }
  return acc;
}

/// [B,T,C,H,W] -> [B,C,H,W,T] per-site trajectories, frame order per
/// direction.  Sites stay batched; frames are never concatenated into one
/// long sequence.
template <typename T>
Tensor<T> temporal_flatten(const Tensor<T>& features, TemporalDir dir) {
  require(features.rank() == 5, "temporal_flatten input must be [B,T,C,H,W]");
  auto sites = permute(features, {0, 2, 3, 4, 1});
  if (dir == TemporalDir::forward) return sites;
  std::int64_t t = features.dim(1);
  std::vector<std::int64_t> rev(static_cast<std::size_t>(t));
  for (std::int64_t i = 0; i < t; ++i) rev[static_cast<std::size_t>(i)] = t - 1 - i;
  return gather_last(sites, rev);
}

/// Inverse of temporal_flatten.
template <typename T>
Tensor<T> temporal_unflatten(const Tensor<T>& sites, TemporalDir dir) {
  require(sites.rank() == 5, "temporal_unflatten input must be [B,C,H,W,T]");
  Tensor<T> s = sites;
  if (dir == TemporalDir::backward) {
    std::int64_t t = sites.dim(4);
    std::vector<std::int64_t> rev(static_cast<std::size_t>(t));
    for (std::int64_t i = 0; i < t; ++i) rev[static_cast<std::size_t>(i)] = t - 1 - i;
    s = gather_last(s, rev);
  }
  return permute(s, {0, 4, 1, 2, 3});
}

}  // namespace demmamba
