// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of reverse-mode gradients.  Meant to
// run on double-precision instances of whatever it checks.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "demmamba/common.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba {

namespace detail {
inline double rel_err(double a, double n) {
  return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1.0});
}
}  // namespace detail

/// Checks d f / d x for a scalar-valued f over every coordinate of x.
/// Returns the maximum relative error between analytic and central
/// finite-difference gradients.
template <typename T, typename F>
double grad_check(F f, Tensor<T> x, T eps) {
  x.set_requires_grad(true);
  x.zero_grad();
  auto loss = f(x);
  loss.backward();
  std::vector<T> analytic = x.grad();

  double worst = 0.0;
  NoGradGuard ng;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    T saved = x.data()[i];
    x.data()[i] = saved + eps;
    double fp = static_cast<double>(f(x).item());
    x.data()[i] = saved - eps;
    double fm = static_cast<double>(f(x).item());
    x.data()[i] = saved;
    double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
    worst = std::max(worst, detail::rel_err(static_cast<double>(analytic[static_cast<std::size_t>(i)]), numeric));
  }
  return worst;
}

/// Same check against several leaves at sampled coordinates.  loss_fn takes
/// no arguments; it must close over the leaves so perturbations are visible.
template <typename T, typename F>
double grad_check_leaves(F loss_fn, std::vector<Tensor<T>> leaves, T eps, Rng& rng,
                         int samples_per_leaf) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  auto loss = loss_fn();
  loss.backward();
  std::vector<std::vector<T>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  double worst = 0.0;
  NoGradGuard ng;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::int64_t n = leaf.numel();
    int samples = samples_per_leaf <= 0 ? static_cast<int>(n)
                                        : std::min<int>(samples_per_leaf, static_cast<int>(n));
    for (int s = 0; s < samples; ++s) {
      std::int64_t i = samples_per_leaf <= 0 ? s : rng.uniform_int(n);
      T saved = leaf.data()[i];
      leaf.data()[i] = saved + eps;
      double fp = static_cast<double>(loss_fn().item());
      leaf.data()[i] = saved - eps;
      double fm = static_cast<double>(loss_fn().item());
      leaf.data()[i] = saved;
      double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      worst = std::max(worst,
                       detail::rel_err(static_cast<double>(analytic[li][static_cast<std::size_t>(i)]), numeric));
    }
  }
  return worst;
}

}  // namespace demmamba
