#pragma once

#include <cmath>
#include <limits>

#include "ght/tensor.hpp"

// Differentiable tensor operations. Everything is shape-checked up front and
// backed by a closure that accumulates into parent gradients. No fusion, no
// views; correctness and determinism first.

namespace ght {
namespace detail {

// numpy-style broadcast of two shapes; throws naming both operands.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (size_t i = 0; i < nd; ++i) {
    int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(strprintf("%s: shapes %s and %s are not broadcastable", op,
                                 shape_str(a).c_str(), shape_str(b).c_str()));
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `in` viewed inside broadcast shape `out` (0 on broadcast dims).
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto in_st = strides_of(in);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i)
    st[off + i] = (in[i] == 1 && out[off + i] != 1) ? 0 : in_st[i];
  return st;
}

// Walks the index space of `shape`, calling f(out_linear, off_a, off_b).
template <class F>
void for_each_broadcast(const Shape& shape, const std::vector<int64_t>& sa,
                        const std::vector<int64_t>& sb, F&& f) {
  int64_t total = numel_of(shape);
  size_t nd = shape.size();
  std::vector<int64_t> idx(nd, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t lin = 0; lin < total; ++lin) {
    f(lin, oa, ob);
    for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
      idx[d]++;
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < shape[d]) break;
      oa -= sa[d] * shape[d];
      ob -= sb[d] * shape[d];
      idx[d] = 0;
    }
  }
}

// outer/extent/inner factorization around one axis.
struct AxisSplit {
  int64_t outer, extent, inner;
};
inline AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise with broadcasting
// ---------------------------------------------------------------------------

template <class S, class FwdF, class BwdA, class BwdB>
Tensor<S> binary_broadcast_op(const char* name, const Tensor<S>& a, const Tensor<S>& b,
                              FwdF fwd, BwdA bwd_a, BwdB bwd_b) {
  Shape out_shape = detail::broadcast_shape(a.shape(), b.shape(), name);
  auto sa = detail::broadcast_strides(a.shape(), out_shape);
  auto sb = detail::broadcast_strides(b.shape(), out_shape);
  std::vector<S> out(static_cast<size_t>(numel_of(out_shape)));
  const auto& av = a.data();
  const auto& bv = b.data();
  detail::for_each_broadcast(out_shape, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
    out[static_cast<size_t>(lin)] = fwd(av[static_cast<size_t>(oa)], bv[static_cast<size_t>(ob)]);
  });

  auto an = a.node();
  auto bn = b.node();
  auto shape_copy = out_shape;
  return Tensor<S>::make_op(
      std::move(out_shape), std::move(out), {an, bn},
      [an, bn, sa, sb, shape_copy, bwd_a, bwd_b](TensorNode<S>& self) {
        bool ga = an->tracked, gb = bn->tracked;
        if (ga) an->ensure_grad();
        if (gb) bn->ensure_grad();
        detail::for_each_broadcast(shape_copy, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
          S go = self.grad[static_cast<size_t>(lin)];
          S x = an->value[static_cast<size_t>(oa)];
          S y = bn->value[static_cast<size_t>(ob)];
          if (ga) an->grad[static_cast<size_t>(oa)] += bwd_a(go, x, y);
          if (gb) bn->grad[static_cast<size_t>(ob)] += bwd_b(go, x, y);
        });
      });
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_broadcast_op<S>(
      "add", a, b, [](S x, S y) { return x + y; }, [](S go, S, S) { return go; },
      [](S go, S, S) { return go; });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_broadcast_op<S>(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S go, S, S) { return go; },
      [](S go, S, S) { return -go; });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_broadcast_op<S>(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S go, S, S y) { return go * y; },
      [](S go, S x, S) { return go * x; });
}

template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return binary_broadcast_op<S>(
      "div", a, b, [](S x, S y) { return x / y; }, [](S go, S, S y) { return go / y; },
      [](S go, S x, S y) { return -go * x / (y * y); });
}

template <class S, class FwdF, class BwdF>
Tensor<S> unary_op(const Tensor<S>& a, FwdF fwd, BwdF bwd) {
  std::vector<S> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
  auto an = a.node();
  return Tensor<S>::make_op(a.shape(), std::move(out), {an}, [an, bwd](TensorNode<S>& self) {
    if (!an->tracked) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += bwd(self.grad[i], an->value[i], self.value[i]);
  });
}

template <class S>
Tensor<S> neg(const Tensor<S>& a) {
  return unary_op(a, [](S x) { return -x; }, [](S go, S, S) { return -go; });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  return unary_op(a, [c](S x) { return c * x; }, [c](S go, S, S) { return c * go; });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  return unary_op(a, [c](S x) { return x + c; }, [](S go, S, S) { return go; });
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  return unary_op(a, [](S x) { return x > S(0) ? x : S(0); },
                  [](S go, S x, S) { return x > S(0) ? go : S(0); });
}

template <class S>
Tensor<S> sqrt_op(const Tensor<S>& a) {
  return unary_op(a, [](S x) { return std::sqrt(x); },
                  [](S go, S, S y) { return y > S(0) ? go / (S(2) * y) : S(0); });
}

// ---------------------------------------------------------------------------
// shaping
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
  if (numel_of(new_shape) != a.numel())
    throw ShapeError(strprintf("reshape: cannot view %s as %s", shape_str(a.shape()).c_str(),
                               shape_str(new_shape).c_str()));
  auto an = a.node();
  std::vector<S> out = a.data();
  return Tensor<S>::make_op(std::move(new_shape), std::move(out), {an},
                            [an](TensorNode<S>& self) {
                              if (!an->tracked) return;
                              an->ensure_grad();
                              for (size_t i = 0; i < self.grad.size(); ++i)
                                an->grad[i] += self.grad[i];
                            });
}

template <class S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& dims) {
  size_t nd = a.shape().size();
  if (dims.size() != nd) throw ShapeError("permute: dims rank mismatch");
  Shape out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = a.shape()[static_cast<size_t>(dims[i])];
  auto in_st = strides_of(a.shape());
  auto out_st = strides_of(out_shape);
  // map: out linear index -> in linear index
  std::vector<S> out(a.data().size());
  int64_t total = a.numel();
  std::vector<int64_t> perm_strides(nd);
  for (size_t i = 0; i < nd; ++i) perm_strides[i] = in_st[static_cast<size_t>(dims[i])];
  std::vector<int64_t> idx(nd, 0);
  int64_t src = 0;
  for (int64_t lin = 0; lin < total; ++lin) {
    out[static_cast<size_t>(lin)] = a.data()[static_cast<size_t>(src)];
    for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
      idx[d]++;
      src += perm_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= perm_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  auto an = a.node();
  auto shape_copy = out_shape;
  return Tensor<S>::make_op(
      std::move(out_shape), std::move(out), {an},
      [an, perm_strides, shape_copy](TensorNode<S>& self) {
        if (!an->tracked) return;
        an->ensure_grad();
        size_t nd2 = shape_copy.size();
        std::vector<int64_t> idx2(nd2, 0);
        int64_t src2 = 0;
        int64_t total2 = static_cast<int64_t>(self.grad.size());
        for (int64_t lin = 0; lin < total2; ++lin) {
          an->grad[static_cast<size_t>(src2)] += self.grad[static_cast<size_t>(lin)];
          for (int d = static_cast<int>(nd2) - 1; d >= 0; --d) {
            idx2[d]++;
            src2 += perm_strides[d];
            if (idx2[d] < shape_copy[d]) break;
            src2 -= perm_strides[d] * shape_copy[d];
            idx2[d] = 0;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  S acc = S(0);
  for (S x : a.data()) acc += x;
  auto an = a.node();
  return Tensor<S>::make_op({}, {acc}, {an}, [an](TensorNode<S>& self) {
    if (!an->tracked) return;
    an->ensure_grad();
    S go = self.grad[0];
    for (auto& g : an->grad) g += go;
  });
}

template <class S>
Tensor<S> sum_axis(const Tensor<S>& a, int axis, bool keepdim = false) {
  axis = normalize_axis(axis, a.shape().size(), "sum_axis");
  auto sp = detail::split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim)
    out_shape[static_cast<size_t>(axis)] = 1;
  else
    out_shape.erase(out_shape.begin() + axis);
  std::vector<S> out(static_cast<size_t>(sp.outer * sp.inner), S(0));
  const auto& av = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t e = 0; e < sp.extent; ++e)
      for (int64_t i = 0; i < sp.inner; ++i)
        out[static_cast<size_t>(o * sp.inner + i)] +=
            av[static_cast<size_t>((o * sp.extent + e) * sp.inner + i)];
  auto an = a.node();
  return Tensor<S>::make_op(std::move(out_shape), std::move(out), {an},
                            [an, sp](TensorNode<S>& self) {
                              if (!an->tracked) return;
                              an->ensure_grad();
                              for (int64_t o = 0; o < sp.outer; ++o)
                                for (int64_t e = 0; e < sp.extent; ++e)
                                  for (int64_t i = 0; i < sp.inner; ++i)
                                    an->grad[static_cast<size_t>((o * sp.extent + e) * sp.inner + i)] +=
                                        self.grad[static_cast<size_t>(o * sp.inner + i)];
                            });
}

// Mean over a set of axes, reducing them away (used for feature-map pooling).
template <class S>
Tensor<S> mean_axes(const Tensor<S>& a, std::vector<int> axes) {
  size_t nd = a.shape().size();
  std::vector<char> reduce(nd, 0);
  for (int ax : axes) reduce[static_cast<size_t>(normalize_axis(ax, nd, "mean_axes"))] = 1;
  Shape out_shape;
  int64_t count = 1;
  for (size_t i = 0; i < nd; ++i) {
    if (reduce[i])
      count *= a.shape()[i];
    else
      out_shape.push_back(a.shape()[i]);
  }
  if (count == 0) throw ShapeError("mean_axes: empty reduction");
  // out strides seen from the input index space
  auto in_shape = a.shape();
  std::vector<int64_t> out_stride_in(nd, 0);
  {
    Shape kept = out_shape;
    auto kept_st = strides_of(kept);
    size_t j = 0;
    for (size_t i = 0; i < nd; ++i)
      if (!reduce[i]) out_stride_in[i] = kept_st[j++];
  }
  std::vector<S> out(static_cast<size_t>(numel_of(out_shape)), S(0));
  const auto& av = a.data();
  {
    std::vector<int64_t> idx(nd, 0);
    int64_t dst = 0;
    int64_t total = a.numel();
    for (int64_t lin = 0; lin < total; ++lin) {
      out[static_cast<size_t>(dst)] += av[static_cast<size_t>(lin)];
      for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
        idx[d]++;
        dst += out_stride_in[d];
        if (idx[d] < in_shape[d]) break;
        dst -= out_stride_in[d] * in_shape[d];
        idx[d] = 0;
      }
    }
  }
  S inv = S(1) / static_cast<S>(count);
  for (auto& x : out) x *= inv;
  auto an = a.node();
  return Tensor<S>::make_op(
      std::move(out_shape), std::move(out), {an},
      [an, out_stride_in, in_shape, inv](TensorNode<S>& self) {
        if (!an->tracked) return;
        an->ensure_grad();
        size_t nd2 = in_shape.size();
        std::vector<int64_t> idx(nd2, 0);
        int64_t dst = 0;
        int64_t total = static_cast<int64_t>(an->value.size());
        for (int64_t lin = 0; lin < total; ++lin) {
          an->grad[static_cast<size_t>(lin)] += self.grad[static_cast<size_t>(dst)] * inv;
          for (int d = static_cast<int>(nd2) - 1; d >= 0; --d) {
            idx[d]++;
            dst += out_stride_in[d];
            if (idx[d] < in_shape[d]) break;
            dst -= out_stride_in[d] * in_shape[d];
            idx[d] = 0;
          }
        }
      });
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,p] * B[p,n], ikj order for locality.
template <class S>
void gemm_acc(const S* a, const S* b, S* c, int64_t m, int64_t p, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * p;
    S* crow = c + i * n;
    for (int64_t k = 0; k < p; ++k) {
      S av = arow[k];
      const S* brow = b + k * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,p] * B[n,p]^T (rows of B are dotted against rows of A).
template <class S>
void gemm_nt_acc(const S* a, const S* b, S* c, int64_t m, int64_t p, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * p;
    for (int64_t j = 0; j < n; ++j) {
      const S* brow = b + j * p;
      S acc = S(0);
      for (int64_t k = 0; k < p; ++k) acc += arow[k] * brow[k];
      c[i * n + j] += acc;
    }
  }
}

// C[p,n] += A[m,p]^T * B[m,n].
template <class S>
void gemm_tn_acc(const S* a, const S* b, S* c, int64_t m, int64_t p, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * p;
    const S* brow = b + i * n;
    for (int64_t k = 0; k < p; ++k) {
      S av = arow[k];
      S* crow = c + k * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// a: [..., m, p] (>= 2-d), b: [p, n]. Leading dims of `a` are batch dims.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dim() < 2 || b.dim() != 2)
    throw ShapeError(strprintf("matmul: need [.., m, p] x [p, n], got %s x %s",
                               shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
  int64_t p = a.shape()[a.shape().size() - 1];
  int64_t m = a.shape()[a.shape().size() - 2];
  if (b.shape()[0] != p)
    throw ShapeError(strprintf("matmul: inner extents disagree, %s x %s",
                               shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
  int64_t n = b.shape()[1];
  int64_t batch = a.numel() / (m * p);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  std::vector<S> out(static_cast<size_t>(batch * m * n), S(0));
  for (int64_t bi = 0; bi < batch; ++bi)
    detail::gemm_acc(a.data().data() + bi * m * p, b.data().data(), out.data() + bi * m * n, m, p,
                     n);
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make_op(std::move(out_shape), std::move(out), {an, bn},
                            [an, bn, batch, m, p, n](TensorNode<S>& self) {
                              if (an->tracked) {
                                an->ensure_grad();
                                for (int64_t bi = 0; bi < batch; ++bi)
                                  detail::gemm_nt_acc(self.grad.data() + bi * m * n,
                                                      bn->value.data(),
                                                      an->grad.data() + bi * m * p, m, n, p);
                              }
                              if (bn->tracked) {
                                bn->ensure_grad();
                                for (int64_t bi = 0; bi < batch; ++bi)
                                  detail::gemm_tn_acc(an->value.data() + bi * m * p,
                                                      self.grad.data() + bi * m * n,
                                                      bn->grad.data(), m, p, n);
                              }
                            });
}

// Batched product: a [B, m, p], b [B, p, n] (or [B, n, p] with transpose_b).
template <class S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_b = false) {
  if (a.dim() != 3 || b.dim() != 3 || a.shape()[0] != b.shape()[0])
    throw ShapeError(strprintf("bmm: need [B, m, p] x [B, %s], got %s x %s",
                               transpose_b ? "n, p" : "p, n", shape_str(a.shape()).c_str(),
                               shape_str(b.shape()).c_str()));
  int64_t batch = a.shape()[0], m = a.shape()[1], p = a.shape()[2];
  int64_t bp = transpose_b ? b.shape()[2] : b.shape()[1];
  int64_t n = transpose_b ? b.shape()[1] : b.shape()[2];
  if (bp != p)
    throw ShapeError(strprintf("bmm: inner extents disagree, %s x %s",
                               shape_str(a.shape()).c_str(), shape_str(b.shape()).c_str()));
  std::vector<S> out(static_cast<size_t>(batch * m * n), S(0));
  for (int64_t bi = 0; bi < batch; ++bi) {
    const S* ap = a.data().data() + bi * m * p;
    const S* bpn = b.data().data() + bi * p * n;  // same size either layout
    S* cp = out.data() + bi * m * n;
    if (transpose_b)
      detail::gemm_nt_acc(ap, bpn, cp, m, p, n);
    else
      detail::gemm_acc(ap, bpn, cp, m, p, n);
  }
  auto an = a.node();
  auto bn = b.node();
  return Tensor<S>::make_op(
      {batch, m, n}, std::move(out), {an, bn},
      [an, bn, batch, m, p, n, transpose_b](TensorNode<S>& self) {
        for (int64_t bi = 0; bi < batch; ++bi) {
          const S* go = self.grad.data() + bi * m * n;
          const S* av = an->value.data() + bi * m * p;
          const S* bv = bn->value.data() + bi * p * n;
          if (an->tracked) {
            an->ensure_grad();
            S* ga = an->grad.data() + bi * m * p;
            if (transpose_b)
              detail::gemm_acc(go, bv, ga, m, n, p);  // dA = dC * B  (B is [n,p])
            else
              detail::gemm_nt_acc(go, bv, ga, m, n, p);  // dA = dC * B^T
          }
          if (bn->tracked) {
            bn->ensure_grad();
            S* gb = bn->grad.data() + bi * p * n;
            if (transpose_b)
              detail::gemm_tn_acc(go, av, gb, m, n, p);  // dB = dC^T * A -> [n,p]
            else
              detail::gemm_tn_acc(av, go, gb, m, p, n);  // dB = A^T * dC
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax / layer norm / losses
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  axis = normalize_axis(axis, a.shape().size(), "softmax");
  auto sp = detail::split_axis(a.shape(), axis);
  std::vector<S> out(a.data().size());
  const auto& av = a.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      S mx = -std::numeric_limits<S>::infinity();
      for (int64_t e = 0; e < sp.extent; ++e)
        mx = std::max(mx, av[static_cast<size_t>((o * sp.extent + e) * sp.inner + i)]);
      S z = S(0);
      for (int64_t e = 0; e < sp.extent; ++e) {
        size_t at = static_cast<size_t>((o * sp.extent + e) * sp.inner + i);
        out[at] = std::exp(av[at] - mx);
        z += out[at];
      }
      for (int64_t e = 0; e < sp.extent; ++e)
        out[static_cast<size_t>((o * sp.extent + e) * sp.inner + i)] /= z;
    }
  auto an = a.node();
  return Tensor<S>::make_op(a.shape(), std::move(out), {an}, [an, sp](TensorNode<S>& self) {
    if (!an->tracked) return;
    an->ensure_grad();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t i = 0; i < sp.inner; ++i) {
        S dot = S(0);
        for (int64_t e = 0; e < sp.extent; ++e) {
          size_t at = static_cast<size_t>((o * sp.extent + e) * sp.inner + i);
          dot += self.grad[at] * self.value[at];
        }
        for (int64_t e = 0; e < sp.extent; ++e) {
          size_t at = static_cast<size_t>((o * sp.extent + e) * sp.inner + i);
          an->grad[at] += self.value[at] * (self.grad[at] - dot);
        }
      }
  });
}

// Softmax over the last axis with a boolean allow-mask. Disallowed positions
// get exactly zero weight; a fully masked row yields a zero row.
// mask rank 2 = [Tq, Tk] shared across leading dims; rank 3 = [B, Tq, Tk]
// with B matching the tensor's first extent.
template <class S>
Tensor<S> masked_softmax(const Tensor<S>& a, const Mask& mask) {
  size_t nd = a.shape().size();
  if (nd < 2) throw ShapeError("masked_softmax: need >= 2-d input");
  int64_t tk = a.shape()[nd - 1];
  int64_t tq = a.shape()[nd - 2];
  int64_t rows = a.numel() / tk;
  int64_t rows_per_batch = 0;
  if (mask.shape.size() == 2) {
    if (mask.shape[0] != tq || mask.shape[1] != tk)
      throw ShapeError(strprintf("masked_softmax: mask %s vs scores %s",
                                 shape_str(mask.shape).c_str(), shape_str(a.shape()).c_str()));
  } else if (mask.shape.size() == 3) {
    if (mask.shape[0] != a.shape()[0] || mask.shape[1] != tq || mask.shape[2] != tk)
      throw ShapeError(strprintf("masked_softmax: mask %s vs scores %s",
                                 shape_str(mask.shape).c_str(), shape_str(a.shape()).c_str()));
    rows_per_batch = a.numel() / (a.shape()[0] * tk);
  } else {
    throw ShapeError("masked_softmax: mask must be rank 2 or 3");
  }
  auto mask_row = [&](int64_t row) -> const uint8_t* {
    if (mask.shape.size() == 2) return mask.allow.data() + (row % tq) * tk;
    int64_t b = row / rows_per_batch;
    int64_t q = row % tq;
    return mask.allow.data() + (b * tq + q) * tk;
  };
  std::vector<S> out(a.data().size(), S(0));
  const auto& av = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    const uint8_t* mrow = mask_row(r);
    const S* xrow = av.data() + r * tk;
    S* yrow = out.data() + r * tk;
    S mx = -std::numeric_limits<S>::infinity();
    for (int64_t j = 0; j < tk; ++j)
      if (mrow[j]) mx = std::max(mx, xrow[j]);
    if (mx == -std::numeric_limits<S>::infinity()) continue;  // fully masked row
    S z = S(0);
    for (int64_t j = 0; j < tk; ++j) {
      if (mrow[j]) {
        yrow[j] = std::exp(xrow[j] - mx);
        z += yrow[j];
      }
    }
    for (int64_t j = 0; j < tk; ++j) yrow[j] /= z;
  }
  auto an = a.node();
  auto mask_copy = mask;
  return Tensor<S>::make_op(a.shape(), std::move(out), {an},
                            [an, rows, tk, tq, rows_per_batch, mask_copy](TensorNode<S>& self) {
                              if (!an->tracked) return;
                              an->ensure_grad();
                              for (int64_t r = 0; r < rows; ++r) {
                                const S* y = self.value.data() + r * tk;
                                const S* gy = self.grad.data() + r * tk;
                                S* gx = an->grad.data() + r * tk;
                                const uint8_t* mrow =
                                    mask_copy.shape.size() == 2
                                        ? mask_copy.allow.data() + (r % tq) * tk
                                        : mask_copy.allow.data() +
                                              ((r / rows_per_batch) * tq + r % tq) * tk;
                                S dot = S(0);
                                for (int64_t j = 0; j < tk; ++j) dot += gy[j] * y[j];
                                for (int64_t j = 0; j < tk; ++j)
                                  if (mrow[j]) gx[j] += y[j] * (gy[j] - dot);
                              }
                            });
}

// Pre-affine output is standardized along `axis`; gain/bias have that extent.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias, int axis,
                     S eps = S(1e-5)) {
  axis = normalize_axis(axis, x.shape().size(), "layer_norm");
  auto sp = detail::split_axis(x.shape(), axis);
  if (gain.numel() != sp.extent || bias.numel() != sp.extent)
    throw ShapeError(strprintf("layer_norm: gain/bias extent %lld/%lld vs axis extent %lld",
                               static_cast<long long>(gain.numel()),
                               static_cast<long long>(bias.numel()),
                               static_cast<long long>(sp.extent)));
  std::vector<S> out(x.data().size());
  std::vector<S> xhat(x.data().size());
  std::vector<S> inv_sigma(static_cast<size_t>(sp.outer * sp.inner));
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t i = 0; i < sp.inner; ++i) {
      S mean = S(0);
      for (int64_t e = 0; e < sp.extent; ++e)
        mean += xv[static_cast<size_t>((o * sp.extent + e) * sp.inner + i)];
      mean /= static_cast<S>(sp.extent);
      S var = S(0);
      for (int64_t e = 0; e < sp.extent; ++e) {
        S d = xv[static_cast<size_t>((o * sp.extent + e) * sp.inner + i)] - mean;
        var += d * d;
      }
      var /= static_cast<S>(sp.extent);
      S inv = S(1) / std::sqrt(var + eps);
      inv_sigma[static_cast<size_t>(o * sp.inner + i)] = inv;
      for (int64_t e = 0; e < sp.extent; ++e) {
        size_t at = static_cast<size_t>((o * sp.extent + e) * sp.inner + i);
        xhat[at] = (xv[at] - mean) * inv;
        out[at] = gv[static_cast<size_t>(e)] * xhat[at] + bv[static_cast<size_t>(e)];
      }
    }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  auto xhat_sh = std::make_shared<std::vector<S>>(std::move(xhat));
  auto inv_sh = std::make_shared<std::vector<S>>(std::move(inv_sigma));
  return Tensor<S>::make_op(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, sp, xhat_sh, inv_sh](TensorNode<S>& self) {
        const auto& xh = *xhat_sh;
        const auto& is = *inv_sh;
        if (gn->tracked) gn->ensure_grad();
        if (bn->tracked) bn->ensure_grad();
        if (xn->tracked) xn->ensure_grad();
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t i = 0; i < sp.inner; ++i) {
            S gd_mean = S(0), gdx_mean = S(0);
            for (int64_t e = 0; e < sp.extent; ++e) {
              size_t at = static_cast<size_t>((o * sp.extent + e) * sp.inner + i);
              S gdy = gn->value[static_cast<size_t>(e)] * self.grad[at];
              gd_mean += gdy;
              gdx_mean += gdy * xh[at];
              if (gn->tracked) gn->grad[static_cast<size_t>(e)] += self.grad[at] * xh[at];
              if (bn->tracked) bn->grad[static_cast<size_t>(e)] += self.grad[at];
            }
            gd_mean /= static_cast<S>(sp.extent);
            gdx_mean /= static_cast<S>(sp.extent);
            if (xn->tracked) {
              S inv = is[static_cast<size_t>(o * sp.inner + i)];
              for (int64_t e = 0; e < sp.extent; ++e) {
                size_t at = static_cast<size_t>((o * sp.extent + e) * sp.inner + i);
                S gdy = gn->value[static_cast<size_t>(e)] * self.grad[at];
                xn->grad[at] += (gdy - gd_mean - xh[at] * gdx_mean) * inv;
              }
            }
          }
      });
}

// Mean label-smoothed negative log-likelihood over positions whose target is
// not `ignore_index`. The smoothing mass is spread uniformly over the whole
// vocabulary (the target class receives 1 - s + s/V).
template <class S>
Tensor<S> cross_entropy_label_smoothed(const Tensor<S>& logits, const IntTensor& targets,
                                       double smoothing, int32_t ignore_index = -1) {
  if (smoothing < 0.0 || smoothing >= 1.0)
    throw ContractError("cross_entropy: smoothing must be in [0, 1)");
  if (logits.dim() < 1) throw ShapeError("cross_entropy: logits must have a class axis");
  int64_t v = logits.shape().back();
  int64_t rows = logits.numel() / v;
  if (targets.numel() != rows)
    throw ShapeError(strprintf("cross_entropy: %lld targets for %lld rows",
                               static_cast<long long>(targets.numel()),
                               static_cast<long long>(rows)));
  const auto& xv = logits.data();
  int64_t counted = 0;
  S loss = S(0);
  for (int64_t r = 0; r < rows; ++r) {
    int32_t t = targets.data[static_cast<size_t>(r)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= v)
      throw IndexError(strprintf("cross_entropy: target %d outside vocabulary of %lld", t,
                                 static_cast<long long>(v)));
    const S* row = xv.data() + r * v;
    S mx = row[0];
    for (int64_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
    S z = S(0), sum_x = S(0);
    for (int64_t c = 0; c < v; ++c) {
      z += std::exp(row[c] - mx);
      sum_x += row[c];
    }
    S lse = mx + std::log(z);
    S s = static_cast<S>(smoothing);
    loss += lse - (S(1) - s) * row[t] - (s / static_cast<S>(v)) * sum_x;
    ++counted;
  }
  if (counted == 0) throw ContractError("cross_entropy: no targets to score");
  loss /= static_cast<S>(counted);
  auto ln = logits.node();
  auto tgt = targets;  // copy into the closure
  return Tensor<S>::make_op(
      {}, {loss}, {ln}, [ln, tgt, rows, v, smoothing, ignore_index, counted](TensorNode<S>& self) {
        if (!ln->tracked) return;
        ln->ensure_grad();
        S go = self.grad[0] / static_cast<S>(counted);
        S s = static_cast<S>(smoothing);
        for (int64_t r = 0; r < rows; ++r) {
          int32_t t = tgt.data[static_cast<size_t>(r)];
          if (t == ignore_index) continue;
          const S* row = ln->value.data() + r * v;
          S* grow = ln->grad.data() + r * v;
          S mx = row[0];
          for (int64_t c = 1; c < v; ++c) mx = std::max(mx, row[c]);
          S z = S(0);
          for (int64_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
          for (int64_t c = 0; c < v; ++c) {
            S p = std::exp(row[c] - mx) / z;
            S q = s / static_cast<S>(v) + (c == t ? S(1) - s : S(0));
            grow[c] += go * (p - q);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// embedding / dropout
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> embedding(const Tensor<S>& table, const IntTensor& ids) {
  if (table.dim() != 2) throw ShapeError("embedding: table must be [V, d]");
  int64_t v = table.shape()[0], d = table.shape()[1];
  Shape out_shape = ids.shape;
  out_shape.push_back(d);
  std::vector<S> out(static_cast<size_t>(ids.numel() * d));
  for (int64_t i = 0; i < ids.numel(); ++i) {
    int32_t id = ids.data[static_cast<size_t>(i)];
    if (id < 0 || id >= v)
      throw IndexError(
          strprintf("embedding: id %d outside vocabulary of %lld", id, static_cast<long long>(v)));
    std::copy_n(table.data().data() + id * d, d, out.data() + i * d);
  }
  auto tn = table.node();
  auto ids_copy = ids;
  return Tensor<S>::make_op(std::move(out_shape), std::move(out), {tn},
                            [tn, ids_copy, d](TensorNode<S>& self) {
                              if (!tn->tracked) return;
                              tn->ensure_grad();
                              for (int64_t i = 0; i < ids_copy.numel(); ++i) {
                                int32_t id = ids_copy.data[static_cast<size_t>(i)];
                                const S* g = self.grad.data() + i * d;
                                S* dst = tn->grad.data() + id * d;
                                for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                              }
                            });
}

// Inverted dropout driven by the caller's stream; identity when not training.
template <class S>
Tensor<S> dropout(const Tensor<S>& a, double p, Rng& rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw ContractError("dropout: p must be < 1");
  S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<S>>(a.data().size());
  std::vector<S> out(a.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    S m = rng.uniform01() < p ? S(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = a.data()[i] * m;
  }
  auto an = a.node();
  return Tensor<S>::make_op(a.shape(), std::move(out), {an}, [an, mask](TensorNode<S>& self) {
    if (!an->tracked) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * (*mask)[i];
  });
}

}  // namespace ght
