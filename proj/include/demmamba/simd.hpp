// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Vectorized exponential for the scan inner loops.  The float path uses the
// classic Cephes polynomial; on AVX2+FMA hardware it runs eight lanes wide,
// elsewhere (and for double) it falls back to the scalar forms.

#pragma once

#include <cstdint>

#include "demmamba/common.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define DEMMAMBA_HAVE_AVX2 1
#endif

namespace demmamba::simd {

#ifdef DEMMAMBA_HAVE_AVX2

inline __m256 exp_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(87.0f);
  const __m256 lo = _mm256_set1_ps(-87.0f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 ln2_hi = _mm256_set1_ps(0.693359375f);
  const __m256 ln2_lo = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_min_ps(x, hi);
  x = _mm256_max_ps(x, lo);
  __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  __m256 z = _mm256_fnmadd_ps(fx, ln2_hi, x);
  z = _mm256_fnmadd_ps(fx, ln2_lo, z);

  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, z, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, z, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, z, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, z, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, z, _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_fmadd_ps(y, _mm256_mul_ps(z, z), z);
  y = _mm256_add_ps(y, one);

  __m256i e = _mm256_cvttps_epi32(fx);
  e = _mm256_add_epi32(e, _mm256_set1_epi32(127));
  e = _mm256_slli_epi32(e, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(e));
}

inline void fill_exp_scaled(const float* a, float scale, float* out, std::int64_t n) {
  std::int64_t i = 0;
  __m256 s = _mm256_set1_ps(scale);
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, exp_ps(_mm256_mul_ps(s, _mm256_loadu_ps(a + i))));
  }
  for (; i < n; ++i) out[i] = fast_exp(scale * a[i]);
}

#else

inline void fill_exp_scaled(const float* a, float scale, float* out, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = fast_exp(scale * a[i]);
}

#endif

/// out[i] = exp(scale * a[i]); float specialization above runs SIMD lanes.
template <typename T>
inline void fill_exp_scaled(const T* a, T scale, T* out, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = fast_exp(scale * a[i]);
}

// One adjoint step of the selective scan: updates the running state
// cotangent lam and accumulates every per-lane gradient stream.
template <typename T>
inline void scan_adjoint_step(const T* cl, const T* anext, const T* al, const T* hl,
                              const T* hprev, const T* bl, const T* arow, const T* ainv, T gv,
                              T xv, T dtv, T* lam, T* dcl, T* dbl, T* dar, T* tx, T* tdt,
                              std::int64_t n0, std::int64_t n) {
  for (std::int64_t i = n0; i < n; ++i) {
    T lam_i = cl[i] * gv + anext[i] * lam[i];
    lam[i] = lam_i;
    T ab = al[i];
    T hpv = hprev[i];
    T phi = (ab - T(1)) * ainv[i];
    dcl[i] += gv * hl[i];
    dbl[i] += lam_i * phi * xv;
    tx[i] = lam_i * phi * bl[i];
    tdt[i] = lam_i * (arow[i] * ab * hpv + ab * bl[i] * xv);
    T dphi_da = (dtv * ab * arow[i] - (ab - T(1))) * ainv[i] * ainv[i];
    dar[i] += lam_i * (dtv * ab * hpv + dphi_da * bl[i] * xv);
  }
}

#ifdef DEMMAMBA_HAVE_AVX2

inline void scan_adjoint_step(const float* cl, const float* anext, const float* al,
                              const float* hl, const float* hprev, const float* bl,
                              const float* arow, const float* ainv, float gv, float xv, float dtv,
                              float* lam, float* dcl, float* dbl, float* dar, float* tx,
                              float* tdt, std::int64_t n0, std::int64_t n) {
  std::int64_t i = n0;
  const __m256 vgv = _mm256_set1_ps(gv);
  const __m256 vxv = _mm256_set1_ps(xv);
  const __m256 vdt = _mm256_set1_ps(dtv);
  const __m256 one = _mm256_set1_ps(1.0f);
  for (; i + 8 <= n; i += 8) {
    __m256 vlam = _mm256_fmadd_ps(_mm256_loadu_ps(cl + i), vgv,
                                  _mm256_mul_ps(_mm256_loadu_ps(anext + i), _mm256_loadu_ps(lam + i)));
    _mm256_storeu_ps(lam + i, vlam);
    __m256 ab = _mm256_loadu_ps(al + i);
    __m256 hpv = _mm256_loadu_ps(hprev + i);
    __m256 vainv = _mm256_loadu_ps(ainv + i);
    __m256 va = _mm256_loadu_ps(arow + i);
    __m256 vb = _mm256_loadu_ps(bl + i);
    __m256 abm1 = _mm256_sub_ps(ab, one);
    __m256 phi = _mm256_mul_ps(abm1, vainv);
    _mm256_storeu_ps(dcl + i, _mm256_fmadd_ps(vgv, _mm256_loadu_ps(hl + i), _mm256_loadu_ps(dcl + i)));
    _mm256_storeu_ps(dbl + i,
                     _mm256_fmadd_ps(_mm256_mul_ps(vlam, phi), vxv, _mm256_loadu_ps(dbl + i)));
    _mm256_storeu_ps(tx + i, _mm256_mul_ps(_mm256_mul_ps(vlam, phi), vb));
    __m256 abhp = _mm256_mul_ps(ab, hpv);
    __m256 t1 = _mm256_fmadd_ps(_mm256_mul_ps(va, ab), hpv,
                                _mm256_mul_ps(_mm256_mul_ps(ab, vb), vxv));
    _mm256_storeu_ps(tdt + i, _mm256_mul_ps(vlam, t1));
    __m256 dphi = _mm256_mul_ps(
        _mm256_fmsub_ps(_mm256_mul_ps(vdt, ab), va, abm1), _mm256_mul_ps(vainv, vainv));
    __m256 da_term = _mm256_fmadd_ps(vdt, abhp, _mm256_mul_ps(_mm256_mul_ps(dphi, vb), vxv));
    _mm256_storeu_ps(dar + i, _mm256_fmadd_ps(vlam, da_term, _mm256_loadu_ps(dar + i)));
  }
  scan_adjoint_step<float>(cl, anext, al, hl, hprev, bl, arow, ainv, gv, xv, dtv, lam, dcl, dbl,
                           dar, tx, tdt, i, n);
}

#endif

}  // namespace demmamba::simd
