// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// State-space scan kernels on plain buffers: reference ODE integrator,
// zero-order-hold discretization, the sequential recurrence, its structured
// convolution-kernel form, the input-dependent (selective) scan, and an
// associative parallel scan over a fixed balanced tree.  These are the
// verification and benchmark surface; the training path wraps the same math
// with gradient support elsewhere.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "demmamba/common.hpp"

namespace demmamba::ssm {

/// Diagonal state-space parameter bundle.  A, B, Cc are per-channel rows of
/// N state entries; selective mode carries per-step B, Cc, dt of length L.
template <typename T>
struct SSMParams {
  std::int64_t channels = 0;    // C_inner
  std::int64_t state_size = 0;  // N
  bool discretized = false;
  bool selective = false;
  std::int64_t seq_len = 0;  // L, meaningful when selective

  std::vector<T> A;   // (C,N); continuous A or discretized A_bar
  std::vector<T> B;   // (C,N), or (L,C,N) when selective; B or B_bar
  std::vector<T> Cc;  // (C,N), or (L,C,N) when selective
  std::vector<T> D;   // (C) skip gain
  std::vector<T> dt;  // (C), or (L,C) when selective

  std::int64_t cn() const { return channels * state_size; }

  void validate() const {
    require(channels > 0 && state_size > 0, "SSMParams needs channels and state_size > 0");
    require(static_cast<std::int64_t>(A.size()) == cn(), "SSMParams A must be (C,N)");
    require(static_cast<std::int64_t>(D.size()) == channels, "SSMParams D must be (C)");
    std::int64_t factor = selective ? seq_len : 1;
    require(selective ? seq_len > 0 : true, "selective SSMParams needs seq_len");
    require(static_cast<std::int64_t>(B.size()) == factor * cn(), "SSMParams B extent mismatch");
    require(static_cast<std::int64_t>(Cc.size()) == factor * cn(), "SSMParams Cc extent mismatch");
    require(static_cast<std::int64_t>(dt.size()) == factor * channels, "SSMParams dt extent mismatch");
  }
};

/// y is (L,C) row-major; h_final is (C,N).
template <typename T>
struct ScanResult {
  std::int64_t len = 0;
  std::int64_t channels = 0;
  std::vector<T> y;
  std::vector<T> h_final;
};

namespace detail {

template <typename T>
void check_input(const SSMParams<T>& p, const std::vector<T>& x, std::int64_t len) {
  require(static_cast<std::int64_t>(x.size()) == len * p.channels,
          "scan input must be (L,C) with L=" + std::to_string(len) + ", C=" +
              std::to_string(p.channels));
}

template <typename T>
inline void zoh_pair(T a_cont, T dt, T b_cont, T& a_bar, T& b_bar) {
  if (a_cont == T(0)) {
    a_bar = T(1);
    b_bar = dt * b_cont;  // limit of (exp(dt a)-1)/a as a->0
    return;
  }
  a_bar = std::exp(dt * a_cont);
  b_bar = (a_bar - T(1)) / a_cont * b_cont;
}

}  // namespace detail

/// Zero-order-hold discretization: A_bar = exp(dt*A), B_bar = (exp(dt*A)-1)/A * B.
template <typename T>
SSMParams<T> zoh_discretize(const SSMParams<T>& p) {
  p.validate();
  if (p.discretized) throw UsageError("zoh_discretize: params already discretized");
  if (p.selective) throw UsageError("zoh_discretize: selective params are discretized per step inside the scan");
  for (T d : p.dt) {
    if (!(d > T(0))) throw DomainError("zoh_discretize requires dt > 0");
  }
  SSMParams<T> out = p;
  out.discretized = true;
  for (std::int64_t c = 0; c < p.channels; ++c) {
    for (std::int64_t n = 0; n < p.state_size; ++n) {
      std::int64_t i = c * p.state_size + n;
      detail::zoh_pair(p.A[static_cast<std::size_t>(i)], p.dt[static_cast<std::size_t>(c)],
                       p.B[static_cast<std::size_t>(i)], out.A[static_cast<std::size_t>(i)],
                       out.B[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

/// Sequential recurrence h_k = A_bar h_{k-1} + B_bar x_k, y_k = C h_k + D x_k.
template <typename T>
ScanResult<T> scan_recurrent(const SSMParams<T>& p, const std::vector<T>& x, std::int64_t len,
                             const std::vector<T>* h0 = nullptr) {
  p.validate();
  if (!p.discretized) throw UsageError("scan_recurrent requires discretized params");
  if (p.selective) throw UsageError("scan_recurrent does not take selective params");
  detail::check_input(p, x, len);
  std::int64_t C = p.channels, N = p.state_size;
  ScanResult<T> res;
  res.len = len;
  res.channels = C;
  res.y.assign(static_cast<std::size_t>(len * C), T(0));
  res.h_final.assign(static_cast<std::size_t>(C * N), T(0));
  if (h0 != nullptr) {
    require(static_cast<std::int64_t>(h0->size()) == C * N, "h0 must be (C,N)");
    res.h_final = *h0;
  }
  std::vector<T>& h = res.h_final;
  for (std::int64_t l = 0; l < len; ++l) {
    for (std::int64_t c = 0; c < C; ++c) {
      T xv = x[static_cast<std::size_t>(l * C + c)];
      const T* ab = p.A.data() + c * N;
      const T* bb = p.B.data() + c * N;
      const T* cc = p.Cc.data() + c * N;
      T* hc = h.data() + c * N;
      T acc = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        hc[n] = ab[n] * hc[n] + bb[n] * xv;
        acc += cc[n] * hc[n];
      }
      res.y[static_cast<std::size_t>(l * C + c)] = acc + p.D[static_cast<std::size_t>(c)] * xv;
    }
  }
  return res;
}

/// Structured-kernel form: y = x (*) K_bar + D x with
/// K_bar = (C B_bar, C A_bar B_bar, ..., C A_bar^{L-1} B_bar).
template <typename T>
ScanResult<T> kernel_conv(const SSMParams<T>& p, const std::vector<T>& x, std::int64_t len) {
  p.validate();
  if (!p.discretized) throw UsageError("kernel_conv requires discretized params");
  if (p.selective) throw UsageError("kernel_conv cannot run selective (time-varying) params");
  detail::check_input(p, x, len);
  std::int64_t C = p.channels, N = p.state_size;
  ScanResult<T> res;
  res.len = len;
  res.channels = C;
  res.y.assign(static_cast<std::size_t>(len * C), T(0));
  res.h_final.assign(static_cast<std::size_t>(C * N), T(0));

  std::vector<T> kernel(static_cast<std::size_t>(len));
  for (std::int64_t c = 0; c < C; ++c) {
    std::fill(kernel.begin(), kernel.end(), T(0));
    const T* ab = p.A.data() + c * N;
    const T* bb = p.B.data() + c * N;
    const T* cc = p.Cc.data() + c * N;
    for (std::int64_t n = 0; n < N; ++n) {
      T pow = bb[n];
      for (std::int64_t l = 0; l < len; ++l) {
        kernel[static_cast<std::size_t>(l)] += cc[n] * pow;
        pow *= ab[n];
      }
      // final state after absorbing the whole input
      T h = T(0);
      for (std::int64_t l = 0; l < len; ++l) {
        h = ab[n] * h + bb[n] * x[static_cast<std::size_t>(l * C + c)];
      }
      res.h_final[static_cast<std::size_t>(c * N + n)] = h;
    }
    for (std::int64_t l = 0; l < len; ++l) {
      T acc = p.D[static_cast<std::size_t>(c)] * x[static_cast<std::size_t>(l * C + c)];
      for (std::int64_t j = 0; j <= l; ++j) {
        acc += kernel[static_cast<std::size_t>(j)] * x[static_cast<std::size_t>((l - j) * C + c)];
      }
      res.y[static_cast<std::size_t>(l * C + c)] = acc;
    }
  }
  return res;
}

/// Input-dependent scan: per-step ZOH of (A, B_k) with timescale dt_k, then
/// the sequential recurrence with time-varying parameters.
template <typename T>
ScanResult<T> selective_scan(const SSMParams<T>& p, const std::vector<T>& x) {
  p.validate();
  if (!p.selective) throw UsageError("selective_scan requires selective (per-step) params");
  if (p.discretized) throw UsageError("selective_scan discretizes internally; pass continuous params");
  std::int64_t L = p.seq_len, C = p.channels, N = p.state_size;
  detail::check_input(p, x, L);
  for (T d : p.dt) {
    if (!(d > T(0))) throw DomainError("selective_scan requires dt > 0 at every step");
  }
  ScanResult<T> res;
  res.len = L;
  res.channels = C;
  res.y.assign(static_cast<std::size_t>(L * C), T(0));
  res.h_final.assign(static_cast<std::size_t>(C * N), T(0));
  std::vector<T>& h = res.h_final;
  for (std::int64_t l = 0; l < L; ++l) {
    const T* bl = p.B.data() + l * C * N;
    const T* cl = p.Cc.data() + l * C * N;
    const T* dtl = p.dt.data() + l * C;
    for (std::int64_t c = 0; c < C; ++c) {
      T xv = x[static_cast<std::size_t>(l * C + c)];
      const T* ac = p.A.data() + c * N;
      const T* bc = bl + c * N;
      const T* cc = cl + c * N;
      T* hc = h.data() + c * N;
      T acc = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        T a_bar, b_bar;
        detail::zoh_pair(ac[n], dtl[c], bc[n], a_bar, b_bar);
        hc[n] = a_bar * hc[n] + b_bar * xv;
        acc += cc[n] * hc[n];
      }
      res.y[static_cast<std::size_t>(l * C + c)] = acc + p.D[static_cast<std::size_t>(c)] * xv;
    }
  }
  return res;
}

/// Same contract as selective_scan, computed with the associative operator
/// (a2,b2)o(a1,b1) = (a2*a1, a2*b1 + b2) over pairs (A_bar_k, B_bar_k x_k)
/// on a balanced Blelloch tree.  The tree shape depends only on L, so the
/// result is deterministic regardless of how lanes are scheduled.
template <typename T>
ScanResult<T> parallel_scan(const SSMParams<T>& p, const std::vector<T>& x) {
  p.validate();
  if (!p.selective) throw UsageError("parallel_scan requires selective (per-step) params");
  if (p.discretized) throw UsageError("parallel_scan discretizes internally; pass continuous params");
  std::int64_t L = p.seq_len, C = p.channels, N = p.state_size;
  detail::check_input(p, x, L);
  for (T d : p.dt) {
    if (!(d > T(0))) throw DomainError("parallel_scan requires dt > 0 at every step");
  }
  ScanResult<T> res;
  res.len = L;
  res.channels = C;
  res.y.assign(static_cast<std::size_t>(L * C), T(0));
  res.h_final.assign(static_cast<std::size_t>(C * N), T(0));

  std::int64_t lp = 1;
  while (lp < L) lp <<= 1;

  // The N state lanes of one channel are swept together: tree nodes are
  // N-contiguous rows, so every access streams whole cache lines and the
  // per-lane operation order (hence the result) matches the scalar sweep.
  parallel_for(C, [&](std::int64_t c_lo, std::int64_t c_hi) {
    std::vector<T> ea(static_cast<std::size_t>(lp * N));
    std::vector<T> eb(static_cast<std::size_t>(lp * N));
    std::vector<T> av(static_cast<std::size_t>(L * N));
    std::vector<T> bv(static_cast<std::size_t>(L * N));
    std::vector<T> yacc(static_cast<std::size_t>(L));
    for (std::int64_t c = c_lo; c < c_hi; ++c) {
      const T* ac = p.A.data() + c * N;
      for (std::int64_t l = 0; l < L; ++l) {
        T dtv = p.dt[static_cast<std::size_t>(l * C + c)];
        T xv = x[static_cast<std::size_t>(l * C + c)];
        const T* bl = p.B.data() + (l * C + c) * N;
        T* arow = av.data() + l * N;
        T* brow = bv.data() + l * N;
        for (std::int64_t n = 0; n < N; ++n) {
          T a_bar, b_bar;
          detail::zoh_pair(ac[n], dtv, bl[n], a_bar, b_bar);
          arow[n] = a_bar;
          brow[n] = b_bar * xv;
        }
      }
      std::copy(av.begin(), av.end(), ea.begin());
      std::copy(bv.begin(), bv.end(), eb.begin());
      for (std::int64_t l = L; l < lp; ++l) {
        T* earow = ea.data() + l * N;
        T* ebrow = eb.data() + l * N;
        for (std::int64_t n = 0; n < N; ++n) {
          earow[n] = T(1);
          ebrow[n] = T(0);
        }
      }
      // up-sweep: node i absorbs node i-d (left neighbor applied first)
      for (std::int64_t d = 1; d < lp; d <<= 1) {
        for (std::int64_t i = 2 * d - 1; i < lp; i += 2 * d) {
          const T* eal = ea.data() + (i - d) * N;
          const T* ebl = eb.data() + (i - d) * N;
          T* ear = ea.data() + i * N;
          T* ebr = eb.data() + i * N;
          for (std::int64_t n = 0; n < N; ++n) {
            ebr[n] = ear[n] * ebl[n] + ebr[n];
            ear[n] = ear[n] * eal[n];
          }
        }
      }
      // down-sweep: exclusive prefixes (identity at the root)
      {
        T* earow = ea.data() + (lp - 1) * N;
        T* ebrow = eb.data() + (lp - 1) * N;
        for (std::int64_t n = 0; n < N; ++n) {
          earow[n] = T(1);
          ebrow[n] = T(0);
        }
      }
      for (std::int64_t d = lp >> 1; d >= 1; d >>= 1) {
        for (std::int64_t i = 2 * d - 1; i < lp; i += 2 * d) {
          T* eal = ea.data() + (i - d) * N;
          T* ebl = eb.data() + (i - d) * N;
          T* ear = ea.data() + i * N;
          T* ebr = eb.data() + i * N;
          for (std::int64_t n = 0; n < N; ++n) {
            T al = eal[n], bl2 = ebl[n];
            eal[n] = ear[n];
            ebl[n] = ebr[n];
            // right child's exclusive = parent's exclusive then left reduction
            ebr[n] = al * ebr[n] + bl2;
            ear[n] = al * ear[n];
          }
        }
      }
      // h_l = e_l applied to the exclusive prefix applied to h0 (= 0)
      std::fill(yacc.begin(), yacc.end(), T(0));
      for (std::int64_t l = 0; l < L; ++l) {
        const T* arow = av.data() + l * N;
        const T* brow = bv.data() + l * N;
        const T* ebrow = eb.data() + l * N;
        const T* cl = p.Cc.data() + (l * C + c) * N;
        T acc = T(0);
        for (std::int64_t n = 0; n < N; ++n) {
          T h = arow[n] * ebrow[n] + brow[n];
          acc += cl[n] * h;
          if (l == L - 1) res.h_final[static_cast<std::size_t>(c * N + n)] = h;
        }
        yacc[static_cast<std::size_t>(l)] = acc;
      }
      T d_gain = p.D[static_cast<std::size_t>(c)];
      for (std::int64_t l = 0; l < L; ++l) {
        res.y[static_cast<std::size_t>(l * C + c)] =
            yacc[static_cast<std::size_t>(l)] +
            d_gain * x[static_cast<std::size_t>(l * C + c)];
      }
    }
  }, 1);
  return res;
}

/// Reference integrator for the continuous system h' = A h + B x with
/// zero-order-hold input: classic RK4 at dt/substeps within each interval,
/// sampling y at interval boundaries.
template <typename T>
ScanResult<T> lti_ode_oracle(const SSMParams<T>& p, const std::vector<T>& x, std::int64_t len,
                             T dt, std::int64_t substeps) {
  p.validate();
  if (p.discretized) throw UsageError("lti_ode_oracle integrates the continuous system");
  if (p.selective) throw UsageError("lti_ode_oracle does not take selective params");
  require(substeps >= 16, "lti_ode_oracle needs substeps >= 16");
  if (!(dt > T(0))) throw DomainError("lti_ode_oracle requires dt > 0");
  detail::check_input(p, x, len);
  std::int64_t C = p.channels, N = p.state_size;
  ScanResult<T> res;
  res.len = len;
  res.channels = C;
  res.y.assign(static_cast<std::size_t>(len * C), T(0));
  res.h_final.assign(static_cast<std::size_t>(C * N), T(0));
  T hstep = dt / static_cast<T>(substeps);
  std::vector<T>& h = res.h_final;
  for (std::int64_t l = 0; l < len; ++l) {
    for (std::int64_t c = 0; c < C; ++c) {
      T xv = x[static_cast<std::size_t>(l * C + c)];
      const T* ac = p.A.data() + c * N;
      const T* bc = p.B.data() + c * N;
      const T* cc = p.Cc.data() + c * N;
      T* hc = h.data() + c * N;
      T acc = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        T a = ac[n], bxv = bc[n] * xv;
        T state = hc[n];
        for (std::int64_t s = 0; s < substeps; ++s) {
          T k1 = a * state + bxv;
          T k2 = a * (state + T(0.5) * hstep * k1) + bxv;
          T k3 = a * (state + T(0.5) * hstep * k2) + bxv;
          T k4 = a * (state + hstep * k3) + bxv;
          state += hstep / T(6) * (k1 + T(2) * k2 + T(2) * k3 + k4);
        }
        if (!std::isfinite(static_cast<double>(state))) {
          throw OverflowError("lti_ode_oracle state diverged (unstable A?)");
        }
        hc[n] = state;
        acc += cc[n] * state;
      }
      res.y[static_cast<std::size_t>(l * C + c)] = acc + p.D[static_cast<std::size_t>(c)] * xv;
    }
  }
  return res;
}

}  // namespace demmamba::ssm
