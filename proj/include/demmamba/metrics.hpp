// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "demmamba/common.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba {

/// 10*log10(peak^2/MSE), capped at 100 dB for identical inputs.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  require(a.shape() == b.shape(), "psnr inputs must share a shape");
  double mse = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5) over valid
/// positions, averaged across leading channels.  Inputs are [...,H,W].
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, int window = 11, double k1 = 0.01,
            double k2 = 0.03, double peak = 1.0) {
  require(a.shape() == b.shape(), "ssim inputs must share a shape");
  require(a.rank() >= 2, "ssim inputs must be at least 2-D");
  std::int64_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  if (h < window || w < window) {
    throw DimensionError("ssim needs extents >= the window (" + std::to_string(window) + ")");
  }
  std::int64_t planes = a.numel() / (h * w);

  std::vector<double> kernel(static_cast<std::size_t>(window) * window);
  {
    double sigma = 1.5, sum = 0.0;
    int half = window / 2;
    for (int y = 0; y < window; ++y) {
      for (int x = 0; x < window; ++x) {
        double dy = y - half, dx = x - half;
        double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(y * window + x)] = v;
        sum += v;
      }
    }
    for (auto& v : kernel) v /= sum;
  }

  const double c1 = (k1 * peak) * (k1 * peak);
  const double c2 = (k2 * peak) * (k2 * peak);
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* pa = a.data() + p * h * w;
    const T* pb = b.data() + p * h * w;
    for (std::int64_t y = 0; y + window <= h; ++y) {
      for (std::int64_t x = 0; x + window <= w; ++x) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int wy = 0; wy < window; ++wy) {
          for (int wx = 0; wx < window; ++wx) {
            double k = kernel[static_cast<std::size_t>(wy * window + wx)];
            double va = pa[(y + wy) * w + (x + wx)];
            double vb = pb[(y + wy) * w + (x + wx)];
            mu_a += k * va;
            mu_b += k * vb;
            aa += k * va * va;
            bb += k * vb * vb;
            ab += k * va * vb;
          }
        }
        double var_a = aa - mu_a * mu_a;
        double var_b = bb - mu_b * mu_b;
        double cov = ab - mu_a * mu_b;
        double v = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        total += v;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace demmamba
