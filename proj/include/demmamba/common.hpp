// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace demmamba {

// ---------------------------------------------------------------------------
// Errors

/// Shape/extent violations (mismatched operands, indivisible sizes, ...).
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse (invalid enum value, backward called twice, ...).
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Domain violations on numeric inputs (nonpositive timescale, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric blow-up detected (non-finite values where finite ones are required).
class OverflowError : public std::runtime_error {
 public:
  explicit OverflowError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed on-disk data. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::uint64_t byte_offset)
      : std::runtime_error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::uint64_t offset;
};

// ---------------------------------------------------------------------------
// Shapes

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix64 core; identical streams on every platform)

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = std::max(uniform(), 1e-300);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Fisher-Yates shuffle of an index vector.
  template <typename V>
  void shuffle(V& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(i + 1)]);
    }
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Fast exponential.  Float path is a Cephes-style polynomial (~2 ulp), used in
// the training-precision scan kernels where std::exp dominates the profile.
// Double path delegates to std::exp so oracle and gradient-check code keeps
// full accuracy.

inline float fast_exp(float x) {
  x = std::min(87.0f, std::max(-87.0f, x));  // branch-free, keeps the loop vectorizable
  float n = std::floor(x * 1.4426950408889634f + 0.5f);
  float r = x - n * 0.693359375f;
  r -= n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  auto bits = static_cast<std::uint32_t>((static_cast<int>(n) + 127) << 23);
  float pow2;
  std::memcpy(&pow2, &bits, 4);
  return p * pow2;
}

inline double fast_exp(double x) { return std::exp(x); }

template <typename T>
inline T fast_sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + fast_exp(-x)) : [&] {
    T e = fast_exp(x);
    return e / (T(1) + e);
  }();
}

template <typename T>
inline T fast_softplus(T x) {
  if (x > T(20)) return x;
  if (x < T(-20)) return fast_exp(x);
  return std::log(T(1) + fast_exp(x));
}

// ---------------------------------------------------------------------------
// Thread cap.  DEMMAMBA_THREADS limits internal data parallelism; 0 selects
// the single-thread deterministic mode.  Kernels only ever parallelize over
// element-disjoint output ranges, so results are identical for any setting.

inline int max_threads() {
  static const int cached = [] {
    const char* env = std::getenv("DEMMAMBA_THREADS");
    unsigned hw = std::thread::hardware_concurrency();
    int n = hw == 0 ? 1 : static_cast<int>(hw);
    if (env != nullptr) {
      int v = std::atoi(env);
      if (v <= 0) return 1;
      n = std::min(n, v);
    }
    return std::max(1, n);
  }();
  return cached;
}

/// Runs fn(begin, end) over a partition of [0, n).  Sequential when the cap
/// is 1 or the range is small.
template <typename F>
void parallel_for(std::int64_t n, F&& fn, std::int64_t grain = 1024) {
  int threads = max_threads();
  if (threads <= 1 || n < 2 * grain) {
    if (n > 0) fn(std::int64_t(0), n);
    return;
  }
  std::int64_t chunks = std::min<std::int64_t>(threads, (n + grain - 1) / grain);
  std::int64_t per = (n + chunks - 1) / chunks;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(chunks));
  for (std::int64_t c = 0; c < chunks; ++c) {
    std::int64_t lo = c * per;
    std::int64_t hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace demmamba
