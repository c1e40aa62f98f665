// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "demmamba/common.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba {

/// 8-bit binary PPM from a gamma-encoded [3,H,W] tensor in [0,1].
template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
  require(img.rank() == 3 && img.dim(0) == 3, "write_ppm expects a [3,H,W] tensor");
  std::int64_t h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing", 0);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = static_cast<double>(img.data()[(c * h + y) * w + x]);
        v = std::min(1.0, std::max(0.0, v));
        out.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
      }
    }
  }
  if (!out) throw FormatError("write failed for '" + path + "'", 0);
}

}  // namespace demmamba
