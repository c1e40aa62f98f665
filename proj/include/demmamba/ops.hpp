// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// The network's structured ops: convolution, affine maps, layer norm and
// depth-to-space, all with recorded backward passes.

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "demmamba/common.hpp"
#include "demmamba/tensor.hpp"

namespace demmamba {

namespace detail {

template <typename T>
struct Conv2dGeom {
  std::int64_t batch, cin, h, w;
  std::int64_t cout, cgin, kh, kw;
  std::int64_t oh, ow;
  std::int64_t stride, padding, groups;
  std::int64_t cout_per_g;
};

template <typename T>
Conv2dGeom<T> conv2d_geometry(const Tensor<T>& input, const Tensor<T>& weight,
                              std::int64_t stride, std::int64_t padding, std::int64_t groups) {
  require(input.rank() == 4, "conv2d input must be [B,Cin,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d weight must be [Cout,Cin/g,kh,kw]");
  Conv2dGeom<T> g;
  g.batch = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.cgin = weight.dim(1);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  g.groups = groups;
  require(g.kh % 2 == 1 && g.kw % 2 == 1, "conv2d kernel extents must be odd");
  require(groups >= 1 && g.cin % groups == 0 && g.cout % groups == 0,
          "conv2d groups must divide Cin and Cout");
  require(g.cgin == g.cin / groups, "conv2d weight Cin/groups mismatch: weight has " +
                                        std::to_string(g.cgin) + ", expected " +
                                        std::to_string(g.cin / groups));
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  require(g.oh >= 1 && g.ow >= 1, "conv2d output would be empty");
  g.cout_per_g = g.cout / groups;
  return g;
}

}  // namespace detail

/// Cross-correlation (no kernel flip).  H' = (H + 2p - kh)/s + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::int64_t stride = 1, std::int64_t padding = 0, std::int64_t groups = 1) {
  auto g = detail::conv2d_geometry(input, weight, stride, padding, groups);
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == g.cout, "conv2d bias must be [Cout]");
  }

  auto out = Tensor<T>::make_op(
      Shape{g.batch, g.cout, g.oh, g.ow},
      bias.defined() ? std::vector<Tensor<T>>{input, weight, bias}
                     : std::vector<Tensor<T>>{input, weight},
      [input, weight, bias, g](TensorNode<T>& node) mutable {
        const T* gy = node.grad.data();
        const T* x = input.data();
        const T* w = weight.data();
        const bool need_dx = input.requires_grad();
        const bool need_dw = weight.requires_grad();
        T* dx = need_dx ? input.grad().data() : nullptr;
        T* dw = need_dw ? weight.grad().data() : nullptr;
        if (bias.defined() && bias.requires_grad()) {
          T* db = bias.grad().data();
          for (std::int64_t b = 0; b < g.batch; ++b) {
            for (std::int64_t co = 0; co < g.cout; ++co) {
              const T* gyp = gy + ((b * g.cout + co) * g.oh) * g.ow;
              T acc = T(0);
              for (std::int64_t i = 0; i < g.oh * g.ow; ++i) acc += gyp[i];
              db[co] += acc;
            }
          }
        }
        if (!need_dx && !need_dw) return;
        for (std::int64_t b = 0; b < g.batch; ++b) {
          for (std::int64_t co = 0; co < g.cout; ++co) {
            std::int64_t grp = co / g.cout_per_g;
            for (std::int64_t oh = 0; oh < g.oh; ++oh) {
              const T* gyrow = gy + (((b * g.cout + co) * g.oh) + oh) * g.ow;
              std::int64_t ih0 = oh * g.stride - g.padding;
              for (std::int64_t kh = 0; kh < g.kh; ++kh) {
                std::int64_t ih = ih0 + kh;
                if (ih < 0 || ih >= g.h) continue;
                for (std::int64_t cig = 0; cig < g.cgin; ++cig) {
                  std::int64_t ci = grp * g.cgin + cig;
                  const T* xrow = x + (((b * g.cin + ci) * g.h) + ih) * g.w;
                  T* dxrow = need_dx ? dx + (((b * g.cin + ci) * g.h) + ih) * g.w : nullptr;
                  const T* wrow = w + (((co * g.cgin + cig) * g.kh) + kh) * g.kw;
                  T* dwrow = need_dw ? dw + (((co * g.cgin + cig) * g.kh) + kh) * g.kw : nullptr;
                  if (g.stride == 1) {
                    for (std::int64_t kw = 0; kw < g.kw; ++kw) {
                      T wv = wrow[kw];
                      std::int64_t off = kw - g.padding;
                      std::int64_t owlo = off < 0 ? -off : 0;
                      std::int64_t owhi = std::min(g.ow, g.w - off);
                      if (need_dx) {
                        T* dxs = dxrow + off;
                        for (std::int64_t ow = owlo; ow < owhi; ++ow) dxs[ow] += wv * gyrow[ow];
                      }
                      if (need_dw) {
                        const T* xs = xrow + off;
                        T acc = T(0);
                        for (std::int64_t ow = owlo; ow < owhi; ++ow) acc += gyrow[ow] * xs[ow];
                        dwrow[kw] += acc;
                      }
                    }
                  } else {
                    for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                      T gv = gyrow[ow];
                      std::int64_t iw0 = ow * g.stride - g.padding;
                      std::int64_t klo = iw0 < 0 ? -iw0 : 0;
                      std::int64_t khi = std::min(g.kw, g.w - iw0);
                      for (std::int64_t kw = klo; kw < khi; ++kw) {
                        if (need_dx) dxrow[iw0 + kw] += gv * wrow[kw];
                        if (need_dw) dwrow[kw] += gv * xrow[iw0 + kw];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });

  const T* x = input.data();
  const T* w = weight.data();
  const T* bptr = bias.defined() ? bias.data() : nullptr;
  T* y = out.data();
  parallel_for(g.batch * g.cout, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bc = lo; bc < hi; ++bc) {
      std::int64_t b = bc / g.cout;
      std::int64_t co = bc % g.cout;
      std::int64_t grp = co / g.cout_per_g;
      T* yplane = y + ((b * g.cout + co) * g.oh) * g.ow;
      T bias_v = bptr ? bptr[co] : T(0);
      for (std::int64_t i = 0; i < g.oh * g.ow; ++i) yplane[i] = bias_v;
      for (std::int64_t oh = 0; oh < g.oh; ++oh) {
        T* yrow = yplane + oh * g.ow;
        std::int64_t ih0 = oh * g.stride - g.padding;
        for (std::int64_t kh = 0; kh < g.kh; ++kh) {
          std::int64_t ih = ih0 + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (std::int64_t cig = 0; cig < g.cgin; ++cig) {
            std::int64_t ci = grp * g.cgin + cig;
            const T* xrow = x + (((b * g.cin + ci) * g.h) + ih) * g.w;
            const T* wrow = w + (((co * g.cgin + cig) * g.kh) + kh) * g.kw;
            if (g.stride == 1) {
              // shifted-axpy form: vectorizes over the output row
              for (std::int64_t kw = 0; kw < g.kw; ++kw) {
                T wv = wrow[kw];
                std::int64_t off = kw - g.padding;
                std::int64_t owlo = off < 0 ? -off : 0;
                std::int64_t owhi = std::min(g.ow, g.w - off);
                const T* xs = xrow + off;
                for (std::int64_t ow = owlo; ow < owhi; ++ow) yrow[ow] += wv * xs[ow];
              }
            } else {
              for (std::int64_t ow = 0; ow < g.ow; ++ow) {
                std::int64_t iw0 = ow * g.stride - g.padding;
                std::int64_t klo = iw0 < 0 ? -iw0 : 0;
                std::int64_t khi = std::min(g.kw, g.w - iw0);
                T acc = T(0);
                for (std::int64_t kw = klo; kw < khi; ++kw) acc += wrow[kw] * xrow[iw0 + kw];
                yrow[ow] += acc;
              }
            }
          }
        }
      }
    }
  }, 1);
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::int64_t stride = 1,
                 std::int64_t padding = 0, std::int64_t groups = 1) {
  return conv2d(input, weight, Tensor<T>(), stride, padding, groups);
}

/// Channel mixing of a [B,Ci,P] tensor: out[b,o,p] = sum_c w[o,c] x[b,c,p] + bias[o].
/// The 1x1-convolution hot path; rows over p are contiguous so every loop
/// is a saxpy or a dot product.
template <typename T>
Tensor<T> channel_mix(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  require(input.rank() >= 2, "channel_mix input must be [B,C,...]");
  require(weight.rank() == 2, "channel_mix weight must be [Cout,Cin]");
  std::int64_t b = input.dim(0), ci = input.dim(1);
  std::int64_t p = input.numel() / (b * ci);
  std::int64_t co = weight.dim(0);
  require(weight.dim(1) == ci, "channel_mix weight Cin mismatch: " + std::to_string(weight.dim(1)) +
                                   " vs " + std::to_string(ci));
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == co, "channel_mix bias must be [Cout]");
  Shape out_shape = input.shape();
  out_shape[1] = co;

  auto out = Tensor<T>::make_op(
      std::move(out_shape),
      bias.defined() ? std::vector<Tensor<T>>{input, weight, bias}
                     : std::vector<Tensor<T>>{input, weight},
      [input, weight, bias, b, ci, co, p](TensorNode<T>& node) mutable {
        const T* gy = node.grad.data();
        const T* x = input.data();
        const T* w = weight.data();
        if (input.requires_grad()) {
          T* dx = input.grad().data();
          for (std::int64_t bi = 0; bi < b; ++bi) {
            for (std::int64_t c = 0; c < ci; ++c) {
              T* dxrow = dx + (bi * ci + c) * p;
              for (std::int64_t o = 0; o < co; ++o) {
                T wv = w[o * ci + c];
                const T* gyrow = gy + (bi * co + o) * p;
                for (std::int64_t i = 0; i < p; ++i) dxrow[i] += wv * gyrow[i];
              }
            }
          }
        }
        if (weight.requires_grad()) {
          T* dw = weight.grad().data();
          for (std::int64_t bi = 0; bi < b; ++bi) {
            for (std::int64_t o = 0; o < co; ++o) {
              const T* gyrow = gy + (bi * co + o) * p;
              for (std::int64_t c = 0; c < ci; ++c) {
                const T* xrow = x + (bi * ci + c) * p;
                T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
                std::int64_t i = 0;
                for (; i + 4 <= p; i += 4) {
                  a0 += gyrow[i] * xrow[i];
                  a1 += gyrow[i + 1] * xrow[i + 1];
                  a2 += gyrow[i + 2] * xrow[i + 2];
                  a3 += gyrow[i + 3] * xrow[i + 3];
                }
                for (; i < p; ++i) a0 += gyrow[i] * xrow[i];
                dw[o * ci + c] += (a0 + a1) + (a2 + a3);
              }
            }
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          T* db = bias.grad().data();
          for (std::int64_t bi = 0; bi < b; ++bi) {
            for (std::int64_t o = 0; o < co; ++o) {
              const T* gyrow = gy + (bi * co + o) * p;
              T acc = T(0);
              for (std::int64_t i = 0; i < p; ++i) acc += gyrow[i];
              db[o] += acc;
            }
          }
        }
      });

  const T* x = input.data();
  const T* w = weight.data();
  const T* bptr = bias.defined() ? bias.data() : nullptr;
  T* y = out.data();
  parallel_for(b * co, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bo = lo; bo < hi; ++bo) {
      std::int64_t bi = bo / co, o = bo % co;
      T* yrow = y + bo * p;
      T bias_v = bptr ? bptr[o] : T(0);
      for (std::int64_t i = 0; i < p; ++i) yrow[i] = bias_v;
      const T* wrow = w + o * ci;
      const T* xbase = x + bi * ci * p;
      for (std::int64_t c = 0; c < ci; ++c) {
        T wv = wrow[c];
        const T* xrow = xbase + c * p;
        for (std::int64_t i = 0; i < p; ++i) yrow[i] += wv * xrow[i];
      }
    }
  }, 1);
  return out;
}

/// Affine map over the last axis: out[..., co] = sum_ci x[..., ci] w[co,ci] + b[co].
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  require(input.rank() >= 1, "linear input must have at least one axis");
  require(weight.rank() == 2, "linear weight must be [Cout,Cin]");
  std::int64_t cin = input.dim(input.rank() - 1);
  std::int64_t cout = weight.dim(0);
  require(weight.dim(1) == cin, "linear weight Cin " + std::to_string(weight.dim(1)) +
                                    " does not match input last extent " + std::to_string(cin));
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == cout, "linear bias must be [Cout]");
  std::int64_t rows = input.numel() / cin;
  Shape so = input.shape();
  so.back() = cout;

  auto out = Tensor<T>::make_op(
      so,
      bias.defined() ? std::vector<Tensor<T>>{input, weight, bias}
                     : std::vector<Tensor<T>>{input, weight},
      [input, weight, bias, rows, cin, cout](TensorNode<T>& node) mutable {
        const T* gy = node.grad.data();
        const T* x = input.data();
        const T* w = weight.data();
        if (input.requires_grad()) {
          T* dx = input.grad().data();
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* gyr = gy + r * cout;
            T* dxr = dx + r * cin;
            for (std::int64_t co = 0; co < cout; ++co) {
              T gv = gyr[co];
              const T* wr = w + co * cin;
              for (std::int64_t ci = 0; ci < cin; ++ci) dxr[ci] += gv * wr[ci];
            }
          }
        }
        if (weight.requires_grad()) {
          T* dw = weight.grad().data();
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* gyr = gy + r * cout;
            const T* xr = x + r * cin;
            for (std::int64_t co = 0; co < cout; ++co) {
              T gv = gyr[co];
              T* dwr = dw + co * cin;
              for (std::int64_t ci = 0; ci < cin; ++ci) dwr[ci] += gv * xr[ci];
            }
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          T* db = bias.grad().data();
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* gyr = gy + r * cout;
            for (std::int64_t co = 0; co < cout; ++co) db[co] += gyr[co];
          }
        }
      });

  const T* x = input.data();
  const T* w = weight.data();
  const T* bptr = bias.defined() ? bias.data() : nullptr;
  T* y = out.data();
  parallel_for(rows, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t r = lo; r < hi; ++r) {
      const T* xr = x + r * cin;
      T* yr = y + r * cout;
      for (std::int64_t co = 0; co < cout; ++co) {
        const T* wr = w + co * cin;
        T acc = bptr ? bptr[co] : T(0);
        for (std::int64_t ci = 0; ci < cin; ++ci) acc += wr[ci] * xr[ci];
        yr[co] = acc;
      }
    }
  }, 256);
  return out;
}

/// Per-position normalization over the last axis, then affine (gain, offset).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gain, const Tensor<T>& offset,
                     T eps = T(1e-5)) {
  std::int64_t c = input.dim(input.rank() - 1);
  require(c > 0, "layer_norm over empty channel axis");
  require(gain.rank() == 1 && gain.dim(0) == c, "layer_norm gain must be [C]");
  require(offset.rank() == 1 && offset.dim(0) == c, "layer_norm offset must be [C]");
  std::int64_t rows = input.numel() / c;

  auto out = Tensor<T>::make_op(
      input.shape(), {input, gain, offset}, [input, gain, offset, rows, c, eps](TensorNode<T>& node) mutable {
        const T* gy = node.grad.data();
        const T* x = input.data();
        const T* gn = gain.data();
        std::vector<T> xhat(static_cast<std::size_t>(c));
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* xr = x + r * c;
          const T* gyr = gy + r * c;
          T mu = T(0);
          for (std::int64_t i = 0; i < c; ++i) mu += xr[i];
          mu /= static_cast<T>(c);
          T var = T(0);
          for (std::int64_t i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
          var /= static_cast<T>(c);
          T inv = T(1) / std::sqrt(var + eps);
          for (std::int64_t i = 0; i < c; ++i) xhat[static_cast<std::size_t>(i)] = (xr[i] - mu) * inv;
          if (gain.requires_grad()) {
            T* dg = gain.grad().data();
            for (std::int64_t i = 0; i < c; ++i) dg[i] += gyr[i] * xhat[static_cast<std::size_t>(i)];
          }
          if (offset.requires_grad()) {
            T* doff = offset.grad().data();
            for (std::int64_t i = 0; i < c; ++i) doff[i] += gyr[i];
          }
          if (input.requires_grad()) {
            T* dx = input.grad().data() + r * c;
            T s1 = T(0), s2 = T(0);
            for (std::int64_t i = 0; i < c; ++i) {
              T gg = gyr[i] * gn[i];
              s1 += gg;
              s2 += gg * xhat[static_cast<std::size_t>(i)];
            }
            s1 /= static_cast<T>(c);
            s2 /= static_cast<T>(c);
            for (std::int64_t i = 0; i < c; ++i) {
              T gg = gyr[i] * gn[i];
              dx[i] += (gg - s1 - xhat[static_cast<std::size_t>(i)] * s2) * inv;
            }
          }
        }
      });

  const T* x = input.data();
  const T* gn = gain.data();
  const T* off = offset.data();
  T* y = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * c;
    T* yr = y + r * c;
    T mu = T(0);
    for (std::int64_t i = 0; i < c; ++i) mu += xr[i];
    mu /= static_cast<T>(c);
    T var = T(0);
    for (std::int64_t i = 0; i < c; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<T>(c);
    T inv = T(1) / std::sqrt(var + eps);
    for (std::int64_t i = 0; i < c; ++i) yr[i] = (xr[i] - mu) * inv * gn[i] + off[i];
  }
  return out;
}

/// Global average pool over the spatial axes: [B,C,H,W] -> [B,C,1,1].
template <typename T>
Tensor<T> mean_spatial(const Tensor<T>& input) {
  require(input.rank() == 4, "mean_spatial input must be [B,C,H,W]");
  std::int64_t b = input.dim(0), c = input.dim(1), p = input.dim(2) * input.dim(3);
  auto out = Tensor<T>::make_op(Shape{b, c, 1, 1}, {input}, [input, b, c, p](TensorNode<T>& node) mutable {
    if (!input.requires_grad()) return;
    T* dx = input.grad().data();
    const T* g = node.grad.data();
    T inv = T(1) / static_cast<T>(p);
    for (std::int64_t bc = 0; bc < b * c; ++bc) {
      T gv = g[bc] * inv;
      T* row = dx + bc * p;
      for (std::int64_t i = 0; i < p; ++i) row[i] += gv;
    }
  });
  const T* x = input.data();
  T* y = out.data();
  T inv = T(1) / static_cast<T>(p);
  for (std::int64_t bc = 0; bc < b * c; ++bc) {
    T acc = T(0);
    const T* row = x + bc * p;
    for (std::int64_t i = 0; i < p; ++i) acc += row[i];
    y[bc] = acc * inv;
  }
  return out;
}

/// Depth-to-space: [B, C*r^2, H, W] -> [B, C, rH, rW].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::int64_t r) {
  require(input.rank() == 4, "pixel_shuffle input must be [B,C*r^2,H,W]");
  std::int64_t b = input.dim(0), cr2 = input.dim(1), h = input.dim(2), w = input.dim(3);
  require(r >= 1 && cr2 % (r * r) == 0,
          "pixel_shuffle channels " + std::to_string(cr2) + " not divisible by r^2");
  if (r == 1) return reshape(input, input.shape());
  std::int64_t c = cr2 / (r * r);
  auto v = reshape(input, {b, c, r, r, h, w});
  auto p = permute(v, {0, 1, 4, 2, 5, 3});
  return reshape(p, {b, c, h * r, w * r});
}

/// Space-to-depth inverse of pixel_shuffle.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::int64_t r) {
  require(input.rank() == 4, "pixel_unshuffle input must be [B,C,rH,rW]");
  std::int64_t b = input.dim(0), c = input.dim(1), hr = input.dim(2), wr = input.dim(3);
  require(r >= 1 && hr % r == 0 && wr % r == 0, "pixel_unshuffle spatial extents not divisible by r");
  if (r == 1) return reshape(input, input.shape());
  auto v = reshape(input, {b, c, hr / r, r, wr / r, r});
  auto p = permute(v, {0, 1, 3, 5, 2, 4});
  return reshape(p, {b, c * r * r, hr / r, wr / r});
}

}  // namespace demmamba
