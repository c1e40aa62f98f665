// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Real 2-D FFT and inverse with gradient support.  Forward transform is
// unnormalized; the inverse carries the 1/(H*W) factor, so the DC bin of a
// constant image of value v is v*H*W.  Arbitrary extents are handled with a
// Bluestein chirp transform around a radix-2 core.

#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "demmamba/common.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba {

namespace fft_detail {

template <typename T>
void fft_pow2(std::complex<T>* buf, std::int64_t n, bool inverse) {
  // Iterative radix-2, bit-reversal order. n must be a power of two.
  for (std::int64_t i = 1, j = 0; i < n; ++i) {
    std::int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  for (std::int64_t len = 2; len <= n; len <<= 1) {
    double ang = (inverse ? 2.0 : -2.0) * 3.141592653589793238462643 / static_cast<double>(len);
    std::complex<T> wlen(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    for (std::int64_t i = 0; i < n; i += len) {
      std::complex<T> w(T(1), T(0));
      for (std::int64_t k = 0; k < len / 2; ++k) {
        std::complex<T> u = buf[i + k];
        std::complex<T> v = buf[i + k + len / 2] * w;
        buf[i + k] = u + v;
        buf[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

inline bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

/// Unnormalized DFT of arbitrary length (inverse lacks the 1/n factor too).
template <typename T>
class Dft1d {
 public:
  explicit Dft1d(std::int64_t n) : n_(n) {
    if (is_pow2(n_)) return;
    m_ = 1;
    while (m_ < 2 * n_ - 1) m_ <<= 1;
    chirp_.resize(static_cast<std::size_t>(n_));
    kernel_fft_.assign(static_cast<std::size_t>(m_), std::complex<T>(0, 0));
    for (std::int64_t i = 0; i < n_; ++i) {
      // exponent of exp(-i*pi*i^2/n), reduced mod 2n to keep the angle small
      std::int64_t q = (i * i) % (2 * n_);
      double ang = -3.141592653589793238462643 * static_cast<double>(q) / static_cast<double>(n_);
      chirp_[static_cast<std::size_t>(i)] =
          std::complex<T>(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    }
    for (std::int64_t i = 0; i < n_; ++i) {
      std::complex<T> c = std::conj(chirp_[static_cast<std::size_t>(i)]);
      kernel_fft_[static_cast<std::size_t>(i)] = c;
      if (i != 0) kernel_fft_[static_cast<std::size_t>(m_ - i)] = c;
    }
    fft_pow2(kernel_fft_.data(), m_, false);
  }

  void forward(std::complex<T>* buf) const { run(buf, false); }
  void inverse(std::complex<T>* buf) const { run(buf, true); }

 private:
  void run(std::complex<T>* buf, bool inverse) const {
    if (is_pow2(n_)) {
      fft_pow2(buf, n_, inverse);
      return;
    }
    // inverse via conjugation: idft(x) = conj(dft(conj(x)))
    if (inverse) {
      for (std::int64_t i = 0; i < n_; ++i) buf[i] = std::conj(buf[i]);
    }
    std::vector<std::complex<T>> a(static_cast<std::size_t>(m_), std::complex<T>(0, 0));
    for (std::int64_t i = 0; i < n_; ++i) a[static_cast<std::size_t>(i)] = buf[i] * chirp_[static_cast<std::size_t>(i)];
    fft_pow2(a.data(), m_, false);
    for (std::int64_t i = 0; i < m_; ++i) a[static_cast<std::size_t>(i)] *= kernel_fft_[static_cast<std::size_t>(i)];
    fft_pow2(a.data(), m_, true);
    T inv_m = T(1) / static_cast<T>(m_);
    for (std::int64_t k = 0; k < n_; ++k) {
      buf[k] = a[static_cast<std::size_t>(k)] * inv_m * chirp_[static_cast<std::size_t>(k)];
    }
    if (inverse) {
      for (std::int64_t i = 0; i < n_; ++i) buf[i] = std::conj(buf[i]);
    }
  }

  std::int64_t n_;
  std::int64_t m_ = 0;
  std::vector<std::complex<T>> chirp_;
  std::vector<std::complex<T>> kernel_fft_;
};

inline std::int64_t half_width(std::int64_t w) { return w / 2 + 1; }

/// Real 2-D DFT of one H*W plane into H*(W/2+1) kept bins.
template <typename T>
void rfft2_plane(const T* x, std::int64_t h, std::int64_t w, const Dft1d<T>& plan_h,
                 const Dft1d<T>& plan_w, T* out_re, T* out_im) {
  std::int64_t wh = half_width(w);
  std::vector<std::complex<T>> rows(static_cast<std::size_t>(h * wh));
  std::vector<std::complex<T>> buf(static_cast<std::size_t>(std::max(h, w)));
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) buf[static_cast<std::size_t>(c)] = std::complex<T>(x[r * w + c], T(0));
    plan_w.forward(buf.data());
    for (std::int64_t v = 0; v < wh; ++v) rows[static_cast<std::size_t>(r * wh + v)] = buf[static_cast<std::size_t>(v)];
  }
  for (std::int64_t v = 0; v < wh; ++v) {
    for (std::int64_t r = 0; r < h; ++r) buf[static_cast<std::size_t>(r)] = rows[static_cast<std::size_t>(r * wh + v)];
    plan_h.forward(buf.data());
    for (std::int64_t u = 0; u < h; ++u) {
      out_re[u * wh + v] = buf[static_cast<std::size_t>(u)].real();
      out_im[u * wh + v] = buf[static_cast<std::size_t>(u)].imag();
    }
  }
}

/// Inverse of rfft2_plane with 1/(H*W) normalization.  The last axis is
/// Hermitian-extended per row; the real part of the result is returned.
template <typename T>
void irfft2_plane(const T* in_re, const T* in_im, std::int64_t h, std::int64_t w,
                  const Dft1d<T>& plan_h, const Dft1d<T>& plan_w, T* out) {
  std::int64_t wh = half_width(w);
  std::vector<std::complex<T>> cols(static_cast<std::size_t>(h * wh));
  std::vector<std::complex<T>> buf(static_cast<std::size_t>(std::max(h, w)));
  T inv_h = T(1) / static_cast<T>(h);
  T inv_w = T(1) / static_cast<T>(w);
  for (std::int64_t v = 0; v < wh; ++v) {
    for (std::int64_t u = 0; u < h; ++u) {
      buf[static_cast<std::size_t>(u)] = std::complex<T>(in_re[u * wh + v], in_im[u * wh + v]);
    }
    plan_h.inverse(buf.data());
    for (std::int64_t r = 0; r < h; ++r) cols[static_cast<std::size_t>(r * wh + v)] = buf[static_cast<std::size_t>(r)] * inv_h;
  }
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t v = 0; v < wh; ++v) buf[static_cast<std::size_t>(v)] = cols[static_cast<std::size_t>(r * wh + v)];
    for (std::int64_t v = wh; v < w; ++v) {
      buf[static_cast<std::size_t>(v)] = std::conj(cols[static_cast<std::size_t>(r * wh + (w - v))]);
    }
    plan_w.inverse(buf.data());
    for (std::int64_t c = 0; c < w; ++c) out[r * w + c] = buf[static_cast<std::size_t>(c)].real() * inv_w;
  }
}

}  // namespace fft_detail

/// Half-plane complex spectrum of a real [B,C,H,W] tensor.  planes has shape
/// [B,C,2,H,W/2+1]; plane 0 is the real part, plane 1 the imaginary part.
template <typename T>
struct ComplexSpectrum {
  Tensor<T> planes;
  std::int64_t width = 0;  // original W, needed to invert the half spectrum

  std::int64_t batch() const { return planes.dim(0); }
  std::int64_t channels() const { return planes.dim(1); }
  std::int64_t height() const { return planes.dim(3); }
  std::int64_t half_w() const { return planes.dim(4); }

  T re(std::int64_t b, std::int64_t c, std::int64_t u, std::int64_t v) const {
    return planes.data()[(((b * channels() + c) * 2 + 0) * height() + u) * half_w() + v];
  }
  T im(std::int64_t b, std::int64_t c, std::int64_t u, std::int64_t v) const {
    return planes.data()[(((b * channels() + c) * 2 + 1) * height() + u) * half_w() + v];
  }
};

template <typename T>
ComplexSpectrum<T> rfft2(const Tensor<T>& x) {
  require(x.rank() == 4, "rfft2 input must be [B,C,H,W]");
  std::int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= 1 && w >= 1, "rfft2 needs H,W >= 1");
  std::int64_t wh = fft_detail::half_width(w);
  auto plan_h = std::make_shared<fft_detail::Dft1d<T>>(h);
  auto plan_w = std::make_shared<fft_detail::Dft1d<T>>(w);

  auto out = Tensor<T>::make_op(
      Shape{b, c, 2, h, wh}, {x}, [x, b, c, h, w, wh, plan_h, plan_w](TensorNode<T>& node) mutable {
        if (!x.requires_grad()) return;
        // Adjoint of the half-spectrum DFT: Hermitian synthesis with unit
        // column weights.  Realized by pre-halving interior columns and
        // undoing the inverse transform's 1/(H*W).
        std::int64_t plane = h * wh;
        std::vector<T> gre(static_cast<std::size_t>(plane)), gim(static_cast<std::size_t>(plane));
        std::vector<T> gx(static_cast<std::size_t>(h * w));
        T* dx = x.grad().data();
        const T* g = node.grad.data();
        for (std::int64_t bc = 0; bc < b * c; ++bc) {
          const T* gsrc = g + bc * 2 * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            std::int64_t v = i % wh;
            bool self_conj = (v == 0) || (w % 2 == 0 && v == w / 2);
            T wgt = self_conj ? T(1) : T(0.5);
            gre[static_cast<std::size_t>(i)] = gsrc[i] * wgt;
            gim[static_cast<std::size_t>(i)] = gsrc[plane + i] * wgt;
          }
          fft_detail::irfft2_plane(gre.data(), gim.data(), h, w, *plan_h, *plan_w, gx.data());
          T* dplane = dx + bc * h * w;
          T hw = static_cast<T>(h * w);
          for (std::int64_t i = 0; i < h * w; ++i) dplane[i] += gx[static_cast<std::size_t>(i)] * hw;
        }
      });

  const T* px = x.data();
  T* po = out.data();
  std::int64_t plane = h * wh;
  parallel_for(b * c, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bc = lo; bc < hi; ++bc) {
      fft_detail::rfft2_plane(px + bc * h * w, h, w, *plan_h, *plan_w, po + bc * 2 * plane,
                              po + bc * 2 * plane + plane);
    }
  }, 1);
  return ComplexSpectrum<T>{out, w};
}

template <typename T>
Tensor<T> irfft2(const Tensor<T>& planes, std::int64_t full_w) {
  require(planes.rank() == 5 && planes.dim(2) == 2, "irfft2 spectrum must be [B,C,2,H,Wh]");
  std::int64_t b = planes.dim(0), c = planes.dim(1), h = planes.dim(3), wh = planes.dim(4);
  require(fft_detail::half_width(full_w) == wh,
          "irfft2 width " + std::to_string(full_w) + " inconsistent with half spectrum of " +
              std::to_string(wh) + " bins");
  auto plan_h = std::make_shared<fft_detail::Dft1d<T>>(h);
  auto plan_w = std::make_shared<fft_detail::Dft1d<T>>(full_w);

  std::int64_t w = full_w;
  auto out = Tensor<T>::make_op(
      Shape{b, c, h, w}, {planes}, [planes, b, c, h, w, wh, plan_h, plan_w](TensorNode<T>& node) mutable {
        if (!planes.requires_grad()) return;
        // Adjoint: forward half-spectrum DFT scaled by m_v/(H*W), where m_v
        // doubles the columns the Hermitian extension mirrors.
        std::int64_t plane = h * wh;
        std::vector<T> gre(static_cast<std::size_t>(plane)), gim(static_cast<std::size_t>(plane));
        T* dp = planes.grad().data();
        const T* g = node.grad.data();
        T inv_hw = T(1) / static_cast<T>(h * w);
        for (std::int64_t bc = 0; bc < b * c; ++bc) {
          fft_detail::rfft2_plane(g + bc * h * w, h, w, *plan_h, *plan_w, gre.data(), gim.data());
          T* dre = dp + bc * 2 * plane;
          T* dim = dre + plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            std::int64_t v = i % wh;
            bool self_conj = (v == 0) || (w % 2 == 0 && v == w / 2);
            T wgt = (self_conj ? T(1) : T(2)) * inv_hw;
            dre[i] += gre[static_cast<std::size_t>(i)] * wgt;
            dim[i] += gim[static_cast<std::size_t>(i)] * wgt;
          }
        }
      });

  const T* pp = planes.data();
  T* po = out.data();
  std::int64_t plane = h * wh;
  parallel_for(b * c, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bc = lo; bc < hi; ++bc) {
      fft_detail::irfft2_plane(pp + bc * 2 * plane, pp + bc * 2 * plane + plane, h, w, *plan_h,
                               *plan_w, po + bc * h * w);
    }
  }, 1);
  return out;
}

template <typename T>
Tensor<T> irfft2(const ComplexSpectrum<T>& spec) {
  return irfft2(spec.planes, spec.width);
}

}  // namespace demmamba
