// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode differentiation.  A Tensor is a
// cheap handle onto a graph node; ops are free functions that record a
// backward closure when gradients are being tracked.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "demmamba/common.hpp"

namespace demmamba {

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// RAII guard disabling graph recording (inference / oracle evaluation).
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // same length as data once touched
    bool requires_grad = false;
    bool backward_done = false;
    std::vector<Tensor<T>> parents;
    std::function<void(Node&)> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::vector<T>& ensure_grad() {
      if (grad.size() != data.size()) grad.assign(data.size(), T(0));
      return grad;
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    std::vector<T> data(static_cast<std::size_t>(numel_of(shape)), value);
    return from_data(std::move(data), std::move(shape), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from_data({value}, Shape{1}, requires_grad);
  }

  static Tensor from_data(std::vector<T> data, Shape shape, bool requires_grad = false) {
    require(static_cast<std::int64_t>(data.size()) == numel_of(shape),
            "tensor data length " + std::to_string(data.size()) + " does not match shape " +
                shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  /// Uniform init in [-bound, bound], drawn in double then cast, so float and
  /// double models seeded identically hold numerically matching parameters.
  static Tensor uniform(Shape shape, Rng& rng, double bound, bool requires_grad = true) {
    std::vector<T> data(static_cast<std::size_t>(numel_of(shape)));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
    return from_data(std::move(data), std::move(shape), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return node_->numel(); }

  // Handles have shallow-const semantics: a const Tensor still exposes
  // mutable storage, like the shared_ptr it wraps.
  T* data() const { return node_->data.data(); }
  std::vector<T>& vec() const { return node_->data; }
  T item() const {
    if (numel() != 1) throw UsageError("item() requires a single-element tensor");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  const Tensor& set_requires_grad(bool rg) const {
    node_->requires_grad = rg;
    return *this;
  }

  std::vector<T>& grad() const { return node_->ensure_grad(); }
  void zero_grad() const {
    auto& g = node_->ensure_grad();
    std::fill(g.begin(), g.end(), T(0));
  }

  bool is_leaf() const { return !node_->backward_fn; }
  Node* node() const { return node_.get(); }

  bool all_finite() const {
    for (T v : node_->data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  /// Detached copy sharing nothing with the graph.
  Tensor detach_copy() const { return from_data(node_->data, node_->shape, false); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->data[i]);
    return Tensor<U>::from_data(std::move(out), node_->shape, false);
  }

  // --- graph construction -------------------------------------------------

  static Tensor make_op(Shape shape, std::vector<Tensor<T>> parents,
                        std::function<void(Node&)> backward_fn) {
    bool track = grad_enabled();
    bool needs = false;
    if (track) {
      for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    Tensor out = zeros(std::move(shape), needs);
    if (track && needs) {
      out.node_->parents = std::move(parents);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

  /// Reverse-mode sweep from a scalar loss.  Populates .grad on every
  /// requires_grad node reachable from it.  A second sweep from the same
  /// root without rebuilding the graph is a usage error.
  void backward() const {
    if (numel() != 1) throw UsageError("backward() requires a scalar loss");
    if (node_->backward_done) {
      throw UsageError("backward() called twice on the same graph root");
    }
    node_->backward_done = true;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].node();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    // order is children-after-parents; walk it back-to-front.
    for (Node* n : order) {
      if (n != node_.get()) n->ensure_grad();
    }
    node_->ensure_grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

 private:
  std::shared_ptr<Node> node_;
};


template <typename T>
using TensorNode = typename Tensor<T>::Node;

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy rules, right-aligned)

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

namespace detail {

// Row-major strides padded/zeroed for broadcasting against an output shape.
inline std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    std::size_t o = i + (out.size() - in.size());
    strides[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& sa, const Shape& sb, const Shape& so, F&& fn) {
  auto stra = broadcast_strides(sa, so);
  auto strb = broadcast_strides(sb, so);
  std::int64_t n = numel_of(so);
  std::size_t r = so.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t lin = 0; lin < n; ++lin) {
    fn(lin, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += stra[d];
      ib += strb[d];
      if (idx[d] < so[d]) break;
      ia -= stra[d] * so[d];
      ib -= strb[d] * so[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    auto out = Tensor<T>::make_op(a.shape(), {a, b}, [a, b](TensorNode<T>& node) mutable {
      const auto& g = node.grad;
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    return out;
  }
  Shape so = broadcast_shape(a.shape(), b.shape());
  auto out = Tensor<T>::make_op(so, {a, b}, [a, b, so](TensorNode<T>& node) mutable {
    const auto& g = node.grad;
    detail::for_each_broadcast(a.shape(), b.shape(), so,
                               [&](std::int64_t lo, std::int64_t ia, std::int64_t ib) {
                                 if (a.requires_grad()) a.grad()[ia] += g[lo];
                                 if (b.requires_grad()) b.grad()[ib] += g[lo];
                               });
  });
  T* po = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  detail::for_each_broadcast(a.shape(), b.shape(), so,
                             [&](std::int64_t lo, std::int64_t ia, std::int64_t ib) {
                               po[lo] = pa[ia] + pb[ib];
                             });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) {
    auto out = Tensor<T>::make_op(a.shape(), {a, b}, [a, b](TensorNode<T>& node) mutable {
      const auto& g = node.grad;
      const T* pa = a.data();
      const T* pb = b.data();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa[i];
      }
    });
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
    return out;
  }
  Shape so = broadcast_shape(a.shape(), b.shape());
  auto out = Tensor<T>::make_op(so, {a, b}, [a, b, so](TensorNode<T>& node) mutable {
    const auto& g = node.grad;
    const T* pa = a.data();
    const T* pb = b.data();
    detail::for_each_broadcast(a.shape(), b.shape(), so,
                               [&](std::int64_t lo, std::int64_t ia, std::int64_t ib) {
                                 if (a.requires_grad()) a.grad()[ia] += g[lo] * pb[ib];
                                 if (b.requires_grad()) b.grad()[ib] += g[lo] * pa[ia];
                               });
  });
  T* po = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
  detail::for_each_broadcast(a.shape(), b.shape(), so,
                             [&](std::int64_t lo, std::int64_t ia, std::int64_t ib) {
                               po[lo] = pa[ia] * pb[ib];
                             });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto out = Tensor<T>::make_op(a.shape(), {a}, [a, factor](TensorNode<T>& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& g = node.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
  const T* pa = a.data();
  T* po = out.data();
  std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * factor;
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

namespace detail {

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, BwdFn bwd) {
  auto out = Tensor<T>::make_op(a.shape(), {a}, [a, bwd](TensorNode<T>& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& g = node.grad;
    const T* px = a.data();
    const T* py = node.data.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(px[i], py[i]);
  });
  const T* pa = a.data();
  T* po = out.data();
  std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return fast_sigmoid(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x * fast_sigmoid(x); },
      [](T x, T) {
        T s = fast_sigmoid(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  // Exact Gaussian-error form.
  constexpr double kInvSqrt2 = 0.7071067811865476;
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return detail::unary_op(
      a,
      [](T x) {
        return static_cast<T>(0.5 * static_cast<double>(x) *
                              (1.0 + std::erf(static_cast<double>(x) * kInvSqrt2)));
      },
      [](T x, T) {
        double xd = static_cast<double>(x);
        double cdf = 0.5 * (1.0 + std::erf(xd * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
        return static_cast<T>(cdf + xd * pdf);
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return fast_softplus(x); }, [](T x, T) { return fast_sigmoid(x); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary_op(
      a, [](T x) { return std::fabs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = Tensor<T>::make_op(Shape{1}, {a}, [a](TensorNode<T>& node) mutable {
    if (!a.requires_grad()) return;
    T g = node.grad[0];
    auto& ga = a.grad();
    for (auto& v : ga) v += g;
  });
  T acc = T(0);
  const T* pa = a.data();
  std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += pa[i];
  out.data()[0] = acc;
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel_of(shape) == a.numel(),
          "reshape to " + shape_str(shape) + " changes element count");
  auto out = Tensor<T>::make_op(std::move(shape), {a}, [a](TensorNode<T>& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& g = node.grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  std::copy(a.data(), a.data() + a.numel(), out.data());
  return out;
}

/// General axis permutation: out dimension i is input dimension axes[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes) {
  int r = a.rank();
  require(static_cast<int>(axes.size()) == r, "permute axes rank mismatch");
  Shape so(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) so[static_cast<std::size_t>(i)] = a.dim(axes[static_cast<std::size_t>(i)]);

  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] =
        in_strides[static_cast<std::size_t>(i + 1)] * a.dim(i + 1);
  }
  std::vector<std::int64_t> gather_strides(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    gather_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
  }

  auto walk = [so, gather_strides](const T* src, auto&& emit) {
    std::size_t r2 = so.size();
    std::vector<std::int64_t> idx(r2, 0);
    std::int64_t src_off = 0;
    std::int64_t n = numel_of(so);
    for (std::int64_t lin = 0; lin < n; ++lin) {
      emit(lin, src_off);
      for (std::size_t d = r2; d-- > 0;) {
        ++idx[d];
        src_off += gather_strides[d];
        if (idx[d] < so[d]) break;
        src_off -= gather_strides[d] * so[d];
        idx[d] = 0;
      }
    }
    (void)src;
  };

  auto out = Tensor<T>::make_op(so, {a}, [a, walk](TensorNode<T>& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& g = node.grad;
    walk(nullptr, [&](std::int64_t lin, std::int64_t src_off) { ga[src_off] += g[lin]; });
  });
  const T* pa = a.data();
  T* po = out.data();
  walk(pa, [&](std::int64_t lin, std::int64_t src_off) { po[lin] = pa[src_off]; });
  return out;
}

/// Gathers along the last axis: out[..., i] = a[..., idx[i]].
template <typename T>
Tensor<T> gather_last(const Tensor<T>& a, const std::vector<std::int64_t>& idx) {
  std::int64_t last = a.dim(a.rank() - 1);
  for (auto i : idx) require(i >= 0 && i < last, "gather index out of range");
  Shape so = a.shape();
  so.back() = static_cast<std::int64_t>(idx.size());
  std::int64_t rows = a.numel() / last;
  std::int64_t cols = static_cast<std::int64_t>(idx.size());

  auto out = Tensor<T>::make_op(so, {a}, [a, idx, rows, cols, last](TensorNode<T>& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& g = node.grad;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * cols;
      T* gar = ga.data() + r * last;
      for (std::int64_t c = 0; c < cols; ++c) gar[idx[static_cast<std::size_t>(c)]] += gr[c];
    }
  });
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* ar = pa + r * last;
    T* outr = po + r * cols;
    for (std::int64_t c = 0; c < cols; ++c) outr[c] = ar[idx[static_cast<std::size_t>(c)]];
  }
  return out;
}

/// Slice along axis 1 of a rank-3 tensor: out = a[:, start:start+count, :].
template <typename T>
Tensor<T> slice_dim1(const Tensor<T>& a, std::int64_t start, std::int64_t count) {
  require(a.rank() == 3, "slice_dim1 expects a rank-3 tensor");
  std::int64_t b = a.dim(0), c = a.dim(1), l = a.dim(2);
  require(start >= 0 && count >= 1 && start + count <= c, "slice_dim1 range out of bounds");
  auto out = Tensor<T>::make_op(Shape{b, count, l}, {a}, [a, start, count, b, c, l](TensorNode<T>& node) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad();
    const auto& g = node.grad;
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const T* gs = g.data() + bi * count * l;
      T* gd = ga.data() + (bi * c + start) * l;
      for (std::int64_t i = 0; i < count * l; ++i) gd[i] += gs[i];
    }
  });
  const T* pa = a.data();
  T* po = out.data();
  for (std::int64_t bi = 0; bi < b; ++bi) {
    std::copy(pa + (bi * c + start) * l, pa + (bi * c + start + count) * l, po + bi * count * l);
  }
  return out;
}

/// Concatenates along axis 0 of equal-tail tensors.
template <typename T>
Tensor<T> concat0(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw UsageError("concat0 of zero tensors");
  Shape so = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == static_cast<int>(so.size()), "concat0 rank mismatch");
    for (int i = 1; i < p.rank(); ++i) require(p.dim(i) == so[static_cast<std::size_t>(i)], "concat0 tail mismatch");
    total += p.dim(0);
  }
  so[0] = total;
  auto out = Tensor<T>::make_op(so, parts, [parts](TensorNode<T>& node) mutable {
    std::int64_t off = 0;
    for (auto p : parts) {
      std::int64_t n = p.numel();
      if (p.requires_grad()) {
        auto& gp = p.grad();
        const T* g = node.grad.data() + off;
        for (std::int64_t i = 0; i < n; ++i) gp[static_cast<std::size_t>(i)] += g[i];
      }
      off += n;
    }
  });
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + off);
    off += p.numel();
  }
  return out;
}

}  // namespace demmamba
