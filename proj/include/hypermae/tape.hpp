#pragma once

// Tape-based reverse-mode differentiation over dense tensors. Nodes are
// appended in execution order, so parents always precede children and one
// reverse sweep visits each reachable node exactly once. Values are written
// once and never mutated afterwards; gradients live beside the values and are
// allocated lazily during the backward sweep.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hypermae/tensor.hpp"

namespace hypermae {

template <class T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(Tensor<T>::zeros(value.shape())) {}

  void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), T(0)); }
};

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& val() const { return tape->value(id); }
  const std::vector<std::size_t>& shape() const { return val().shape(); }
  std::size_t numel() const { return val().numel(); }
};

template <class T>
struct BackwardReport {
  std::vector<Parameter<T>*> detached;  // parameters with no path to the loss
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool reachable = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  Var<T> constant(Tensor<T> v) { return {this, push(std::move(v), {}, nullptr)}; }

  Var<T> leaf(Parameter<T>& p) {
    auto it = lease_index_.find(&p);
    if (it != lease_index_.end()) return {this, leases_[it->second].second};
    const std::size_t id = push(p.value, {}, nullptr);
    lease_index_[&p] = leases_.size();
    leases_.emplace_back(&p, id);
    return {this, id};
  }

  std::size_t push(Tensor<T> value, std::vector<std::size_t> parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }

  // gradient buffer, allocated as zeros on first touch
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  void add_grad(std::size_t id, const Tensor<T>& contribution) {
    Tensor<T>& g = grad(id);
    check(g.same_shape(contribution), "gradient shape mismatch: " + shape_str(g.shape()) +
                                          " vs " + shape_str(contribution.shape()));
    T* dst = g.data();
    const T* src = contribution.data();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
  }

  /// Reverse sweep from a scalar loss. Populates (accumulates into) the
  /// gradient of every leased parameter; parameters with no path to the loss
  /// keep a zero gradient and are listed in the report.
  BackwardReport<T> backward(Var<T> loss) {
    check(loss.tape == this, "loss belongs to a different tape");
    check(value(loss.id).numel() == 1, "backward requires a scalar loss, got shape " +
                                           shape_str(value(loss.id).shape()));
    // mark the ancestry of the loss
    for (auto& n : nodes_) n.reachable = false;
    std::vector<std::size_t> stack{loss.id};
    nodes_[loss.id].reachable = true;
    while (!stack.empty()) {
      const std::size_t id = stack.back();
      stack.pop_back();
      for (std::size_t p : nodes_[id].parents) {
        if (!nodes_[p].reachable) {
          nodes_[p].reachable = true;
          stack.push_back(p);
        }
      }
    }
    grad(loss.id)[0] = T(1);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.reachable && n.backward && n.has_grad) n.backward(*this, id);
    }

    BackwardReport<T> report;
    for (auto& [param, id] : leases_) {
      if (nodes_[id].reachable && nodes_[id].has_grad) {
        T* dst = param->grad.data();
        const T* src = nodes_[id].grad.data();
        for (std::size_t i = 0; i < param->grad.numel(); ++i) dst[i] += src[i];
      } else {
        report.detached.push_back(param);
      }
    }
    return report;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  // deque: appending must not invalidate references to existing node values
  std::deque<Node> nodes_;
  std::vector<std::pair<Parameter<T>*, std::size_t>> leases_;
  std::map<Parameter<T>*, std::size_t> lease_index_;
};

// ---------------------------------------------------------------------------
// raw tensor helpers shared by forward and backward passes
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
inline void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
                 bool ta, bool tb, bool acc) {
  if constexpr (std::is_same_v<T, float>) {
    kernels::gemm_f32(a, b, c, m, k, n, ta, tb, acc);
  } else {
    kernels::gemm_f64(a, b, c, m, k, n, ta, tb, acc);
  }
}

// odometer loop over an output shape with two broadcast input offsets
template <class T, class F>
void for_each_broadcast2(const std::vector<std::size_t>& out_shape,
                         const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                         F&& f) {
  const std::size_t rank = out_shape.size();
  const std::size_t total = shape_numel(out_shape);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    f(flat, oa, ob);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out_shape[ax]) break;
      oa -= sa[ax] * out_shape[ax];
      ob -= sb[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
}

// sum `g` down to `target` shape under trailing-axis broadcast rules
template <class T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const std::vector<std::size_t>& target) {
  if (g.shape() == target) return g;
  Tensor<T> out(target);
  const auto st = broadcast_strides(target, g.shape());
  const auto zeros = std::vector<std::size_t>(g.shape().size(), 0);
  for_each_broadcast2<T>(g.shape(), st, zeros,
                         [&](std::size_t flat, std::size_t ot, std::size_t) {
                           out[ot] += g[flat];
                         });
  return out;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
  check(axis < shape.size(), "axis " + std::to_string(axis) + " out of range for " +
                                 shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline std::vector<std::size_t> drop_axis(const std::vector<std::size_t>& shape,
                                          std::size_t axis, bool keepdims) {
  std::vector<std::size_t> out = shape;
  if (keepdims) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    if (out.empty()) out.push_back(1);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

namespace ops {

// -- elementwise binary with trailing-axis broadcasting ----------------------

enum class BinaryKind { add, sub, mul, div };

template <class T>
Var<T> binary(Var<T> a, Var<T> b, BinaryKind kind) {
  Tape<T>& tape = *a.tape;
  check(a.tape == b.tape, "operands live on different tapes");
  const auto& av = a.val();
  const auto& bv = b.val();
  const auto out_shape = broadcast_shape(av.shape(), bv.shape());
  Tensor<T> out(out_shape);

  const auto sa = broadcast_strides(av.shape(), out_shape);
  const auto sb = broadcast_strides(bv.shape(), out_shape);
  const bool same = av.shape() == bv.shape();
  if (same) {
    const T* pa = av.data();
    const T* pb = bv.data();
    T* po = out.data();
    const std::size_t n = out.numel();
    switch (kind) {
      case BinaryKind::add:
        if constexpr (std::is_same_v<T, float>) {
          kernels::vadd_f32(pa, pb, po, n);
        } else {
          for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
        }
        break;
      case BinaryKind::sub:
        if constexpr (std::is_same_v<T, float>) {
          kernels::vsub_f32(pa, pb, po, n);
        } else {
          for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
        }
        break;
      case BinaryKind::mul:
        if constexpr (std::is_same_v<T, float>) {
          kernels::vmul_f32(pa, pb, po, n);
        } else {
          for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
        }
        break;
      case BinaryKind::div:
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
        break;
    }
  } else {
    detail::for_each_broadcast2<T>(out_shape, sa, sb,
                                   [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                     switch (kind) {
                                       case BinaryKind::add: out[o] = av[ia] + bv[ib]; break;
                                       case BinaryKind::sub: out[o] = av[ia] - bv[ib]; break;
                                       case BinaryKind::mul: out[o] = av[ia] * bv[ib]; break;
                                       case BinaryKind::div: out[o] = av[ia] / bv[ib]; break;
                                     }
                                   });
  }

  const std::size_t ida = a.id, idb = b.id;
  auto back = [ida, idb, kind](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& av2 = t.value(ida);
    const Tensor<T>& bv2 = t.value(idb);
    const auto& os = g.shape();
    const auto sa2 = broadcast_strides(av2.shape(), os);
    const auto sb2 = broadcast_strides(bv2.shape(), os);
    Tensor<T> da(av2.shape()), db(bv2.shape());
    // offsets into the (smaller) operand tensors need their own odometer
    detail::for_each_broadcast2<T>(os, sa2, sb2,
                                   [&](std::size_t o, std::size_t ia, std::size_t ib) {
                                     const T gv = g[o];
                                     switch (kind) {
                                       case BinaryKind::add:
                                         da[ia] += gv;
                                         db[ib] += gv;
                                         break;
                                       case BinaryKind::sub:
                                         da[ia] += gv;
                                         db[ib] -= gv;
                                         break;
                                       case BinaryKind::mul:
                                         da[ia] += gv * bv2[ib];
                                         db[ib] += gv * av2[ia];
                                         break;
                                       case BinaryKind::div: {
                                         const T inv = T(1) / bv2[ib];
                                         da[ia] += gv * inv;
                                         db[ib] -= gv * av2[ia] * inv * inv;
                                         break;
                                       }
                                     }
                                   });
    t.add_grad(ida, da);
    t.add_grad(idb, db);
  };
  return {&tape, tape.push(std::move(out), {a.id, b.id}, back)};
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(a, b, BinaryKind::add);
}
template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(a, b, BinaryKind::sub);
}
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(a, b, BinaryKind::mul);
}
template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  return binary(a, b, BinaryKind::div);
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  return mul(a, a.tape->constant(Tensor<T>::scalar(s)));
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  return add(a, a.tape->constant(Tensor<T>::scalar(s)));
}

// -- elementwise unary --------------------------------------------------------

enum class UnaryKind { gelu, relu, sqrt_, cos_, sin_, exp_, log_, neg };

template <class T>
Var<T> unary(Var<T> a, UnaryKind kind) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  Tensor<T> out(av.shape());
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  const T* src = av.data();
  T* dst = out.data();
  const std::size_t n = av.numel();
  switch (kind) {
    case UnaryKind::gelu:
      for (std::size_t i = 0; i < n; ++i) {
        const T x = src[i];
        dst[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
      }
      break;
    case UnaryKind::relu:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
      break;
    case UnaryKind::sqrt_:
      for (std::size_t i = 0; i < n; ++i) {
        check(src[i] >= T(0), "sqrt of negative value");
        dst[i] = std::sqrt(src[i]);
      }
      break;
    case UnaryKind::cos_:
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::cos(src[i]);
      break;
    case UnaryKind::sin_:
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::sin(src[i]);
      break;
    case UnaryKind::exp_:
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::exp(src[i]);
      break;
    case UnaryKind::log_:
      for (std::size_t i = 0; i < n; ++i) {
        check(src[i] > T(0), "log of non-positive value");
        dst[i] = std::log(src[i]);
      }
      break;
    case UnaryKind::neg:
      for (std::size_t i = 0; i < n; ++i) dst[i] = -src[i];
      break;
  }
  const std::size_t ida = a.id;
  auto back = [ida, kind](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& x = t.value(ida);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& da = t.grad(ida);
    const std::size_t count = x.numel();
    switch (kind) {
      case UnaryKind::gelu:
        for (std::size_t i = 0; i < count; ++i) {
          const T xv = x[i];
          const T phi = inv_sqrt2pi * std::exp(T(-0.5) * xv * xv);
          const T Phi = T(0.5) * (T(1) + std::erf(xv * inv_sqrt2));
          da[i] += g[i] * (Phi + xv * phi);
        }
        break;
      case UnaryKind::relu:
        for (std::size_t i = 0; i < count; ++i) da[i] += x[i] > T(0) ? g[i] : T(0);
        break;
      case UnaryKind::sqrt_:
        for (std::size_t i = 0; i < count; ++i) da[i] += g[i] * T(0.5) / y[i];
        break;
      case UnaryKind::cos_:
        for (std::size_t i = 0; i < count; ++i) da[i] -= g[i] * std::sin(x[i]);
        break;
      case UnaryKind::sin_:
        for (std::size_t i = 0; i < count; ++i) da[i] += g[i] * std::cos(x[i]);
        break;
      case UnaryKind::exp_:
        for (std::size_t i = 0; i < count; ++i) da[i] += g[i] * y[i];
        break;
      case UnaryKind::log_:
        for (std::size_t i = 0; i < count; ++i) da[i] += g[i] / x[i];
        break;
      case UnaryKind::neg:
        for (std::size_t i = 0; i < count; ++i) da[i] -= g[i];
        break;
    }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

template <class T>
Var<T> gelu(Var<T> a) {
  return unary(a, UnaryKind::gelu);
}
template <class T>
Var<T> relu(Var<T> a) {
  return unary(a, UnaryKind::relu);
}
template <class T>
Var<T> sqrt(Var<T> a) {
  return unary(a, UnaryKind::sqrt_);
}
template <class T>
Var<T> cos(Var<T> a) {
  return unary(a, UnaryKind::cos_);
}
template <class T>
Var<T> sin(Var<T> a) {
  return unary(a, UnaryKind::sin_);
}
template <class T>
Var<T> exp(Var<T> a) {
  return unary(a, UnaryKind::exp_);
}
template <class T>
Var<T> log(Var<T> a) {
  return unary(a, UnaryKind::log_);
}
template <class T>
Var<T> neg(Var<T> a) {
  return unary(a, UnaryKind::neg);
}

// -- batched contraction ------------------------------------------------------

// a: [B,]M,K (trans_a: [B,]K,M), b: [B,]K,N (trans_b: [B,]N,K) -> [B,]M,N.
// A rank-2 operand against a rank-3 one is shared across the batch.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false) {
  Tape<T>& tape = *a.tape;
  check(a.tape == b.tape, "operands live on different tapes");
  const auto& av = a.val();
  const auto& bv = b.val();
  check(av.rank() == 2 || av.rank() == 3,
        "matmul lhs must be rank 2 or 3, got " + shape_str(av.shape()));
  check(bv.rank() == 2 || bv.rank() == 3,
        "matmul rhs must be rank 2 or 3, got " + shape_str(bv.shape()));

  const bool ab = av.rank() == 3;
  const bool bb = bv.rank() == 3;
  const std::size_t batch = ab ? av.extent(0) : (bb ? bv.extent(0) : 1);
  if (ab && bb)
    check(av.extent(0) == bv.extent(0),
          "matmul batch axis mismatch: " + std::to_string(av.extent(0)) + " vs " +
              std::to_string(bv.extent(0)));

  const std::size_t m = trans_a ? av.extent(ab ? 2 : 1) : av.extent(ab ? 1 : 0);
  const std::size_t ka = trans_a ? av.extent(ab ? 1 : 0) : av.extent(ab ? 2 : 1);
  const std::size_t kb = trans_b ? bv.extent(bb ? 2 : 1) : bv.extent(bb ? 1 : 0);
  const std::size_t n = trans_b ? bv.extent(bb ? 1 : 0) : bv.extent(bb ? 2 : 1);
  check(ka == kb, "matmul contracted axis mismatch: " + std::to_string(ka) + " vs " +
                      std::to_string(kb) + " (" + shape_str(av.shape()) + " . " +
                      shape_str(bv.shape()) + ")");
  const std::size_t k = ka;

  std::vector<std::size_t> out_shape =
      (ab || bb) ? std::vector<std::size_t>{batch, m, n} : std::vector<std::size_t>{m, n};
  Tensor<T> out(out_shape);
  const std::size_t a_stride = ab ? m * k : 0;
  const std::size_t b_stride = bb ? k * n : 0;
  for (std::size_t s = 0; s < batch; ++s)
    detail::gemm<T>(av.data() + s * a_stride, bv.data() + s * b_stride, out.data() + s * m * n, m,
                    k, n, trans_a, trans_b, false);

  const std::size_t ida = a.id, idb = b.id;
  auto back = [ida, idb, trans_a, trans_b, batch, m, k, n, ab, bb, a_stride,
               b_stride](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& av2 = t.value(ida);
    const Tensor<T>& bv2 = t.value(idb);
    Tensor<T>& da = t.grad(ida);
    Tensor<T>& db = t.grad(idb);
    for (std::size_t s = 0; s < batch; ++s) {
      const T* gp = g.data() + s * m * n;
      const T* ap = av2.data() + s * a_stride;
      const T* bp = bv2.data() + s * b_stride;
      T* dap = da.data() + s * a_stride;
      T* dbp = db.data() + s * b_stride;
      if (!trans_a) {
        // da[m,k] += g . op(b)^T
        if (!trans_b)
          detail::gemm<T>(gp, bp, dap, m, n, k, false, true, true);
        else
          detail::gemm<T>(gp, bp, dap, m, n, k, false, false, true);
      } else {
        // a stored k x m: da[k,m] += op(b) . g^T
        if (!trans_b)
          detail::gemm<T>(bp, gp, dap, k, n, m, false, true, true);
        else
          detail::gemm<T>(bp, gp, dap, k, n, m, true, true, true);
      }
      if (!trans_b) {
        // db[k,n] += op(a)^T . g
        if (!trans_a)
          detail::gemm<T>(ap, gp, dbp, k, m, n, true, false, true);
        else
          detail::gemm<T>(ap, gp, dbp, k, m, n, false, false, true);
      } else {
        // b stored n x k: db[n,k] += g^T . op(a)
        if (!trans_a)
          detail::gemm<T>(gp, ap, dbp, n, m, k, true, false, true);
        else
          detail::gemm<T>(gp, ap, dbp, n, m, k, true, true, true);
      }
    }
  };
  return {&tape, tape.push(std::move(out), {a.id, b.id}, back)};
}

// -- reductions ---------------------------------------------------------------

template <class T>
Var<T> sum_axis(Var<T> a, std::size_t axis, bool keepdims = false) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto sp = detail::split_axis(av.shape(), axis);
  Tensor<T> out(detail::drop_axis(av.shape(), axis, keepdims));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l) {
      const T* src = av.data() + (o * sp.len + l) * sp.inner;
      T* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  const std::size_t ida = a.id;
  auto back = [ida, sp](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t l = 0; l < sp.len; ++l) {
        T* dst = da.data() + (o * sp.len + l) * sp.inner;
        const T* src = g.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
      }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

template <class T>
Var<T> mean_axis(Var<T> a, std::size_t axis, bool keepdims = false) {
  const auto sp = detail::split_axis(a.val().shape(), axis);
  check(sp.len > 0, "mean over empty axis " + std::to_string(axis));
  return scale(sum_axis(a, axis, keepdims), T(1) / static_cast<T>(sp.len));
}

template <class T>
Var<T> max_axis(Var<T> a, std::size_t axis, bool keepdims = false) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto sp = detail::split_axis(av.shape(), axis);
  check(sp.len > 0, "max over empty axis " + std::to_string(axis));
  Tensor<T> out(detail::drop_axis(av.shape(), axis, keepdims));
  std::vector<std::size_t> arg(sp.outer * sp.inner, 0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      T best = av[(o * sp.len) * sp.inner + i];
      std::size_t best_l = 0;
      for (std::size_t l = 1; l < sp.len; ++l) {
        const T v = av[(o * sp.len + l) * sp.inner + i];
        if (v > best) {  // strict: ties keep the lowest index
          best = v;
          best_l = l;
        }
      }
      out[o * sp.inner + i] = best;
      arg[o * sp.inner + i] = best_l;
    }
  const std::size_t ida = a.id;
  auto back = [ida, sp, arg](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t l = arg[o * sp.inner + i];
        da[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
      }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

template <class T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  T s = 0;
  if constexpr (std::is_same_v<T, float>) {
    s = kernels::vsum_f32(av.data(), av.numel());
  } else {
    for (std::size_t i = 0; i < av.numel(); ++i) s += av[i];
  }
  const std::size_t ida = a.id;
  auto back = [ida](Tape<T>& t, std::size_t self) {
    const T gv = t.grad(self)[0];
    Tensor<T>& da = t.grad(ida);
    for (std::size_t i = 0; i < da.numel(); ++i) da[i] += gv;
  };
  return {&tape, tape.push(Tensor<T>::scalar(s), {a.id}, back)};
}

template <class T>
Var<T> mean_all(Var<T> a) {
  const std::size_t n = a.numel();
  check(n > 0, "mean of empty tensor");
  return scale(sum_all(a), T(1) / static_cast<T>(n));
}

// -- softmax / log-softmax / layer norm ----------------------------------------

template <class T>
Var<T> softmax(Var<T> a, std::size_t axis) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto sp = detail::split_axis(av.shape(), axis);
  Tensor<T> out(av.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      T mx = av[(o * sp.len) * sp.inner + i];
      for (std::size_t l = 1; l < sp.len; ++l)
        mx = std::max(mx, av[(o * sp.len + l) * sp.inner + i]);
      double denom = 0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(static_cast<double>(av[(o * sp.len + l) * sp.inner + i] - mx));
        out[(o * sp.len + l) * sp.inner + i] = static_cast<T>(e);
        denom += e;
      }
      const T inv = static_cast<T>(1.0 / denom);
      for (std::size_t l = 0; l < sp.len; ++l) out[(o * sp.len + l) * sp.inner + i] *= inv;
    }
  const std::size_t ida = a.id;
  auto back = [ida, sp](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double dot = 0;
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t off = (o * sp.len + l) * sp.inner + i;
          dot += static_cast<double>(g[off]) * static_cast<double>(y[off]);
        }
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t off = (o * sp.len + l) * sp.inner + i;
          da[off] += static_cast<T>(static_cast<double>(y[off]) *
                                    (static_cast<double>(g[off]) - dot));
        }
      }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

template <class T>
Var<T> log_softmax(Var<T> a, std::size_t axis) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto sp = detail::split_axis(av.shape(), axis);
  Tensor<T> out(av.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      T mx = av[(o * sp.len) * sp.inner + i];
      for (std::size_t l = 1; l < sp.len; ++l)
        mx = std::max(mx, av[(o * sp.len + l) * sp.inner + i]);
      double denom = 0;
      for (std::size_t l = 0; l < sp.len; ++l)
        denom += std::exp(static_cast<double>(av[(o * sp.len + l) * sp.inner + i] - mx));
      const double lse = static_cast<double>(mx) + std::log(denom);
      for (std::size_t l = 0; l < sp.len; ++l) {
        const std::size_t off = (o * sp.len + l) * sp.inner + i;
        out[off] = static_cast<T>(static_cast<double>(av[off]) - lse);
      }
    }
  const std::size_t ida = a.id;
  auto back = [ida, sp](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        double gsum = 0;
        for (std::size_t l = 0; l < sp.len; ++l)
          gsum += static_cast<double>(g[(o * sp.len + l) * sp.inner + i]);
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t off = (o * sp.len + l) * sp.inner + i;
          da[off] += static_cast<T>(static_cast<double>(g[off]) -
                                    std::exp(static_cast<double>(y[off])) * gsum);
        }
      }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

/// Normalizes along `axis` (mean 0, variance 1 before affine), then applies
/// gain/bias indexed by the axis coordinate.
template <class T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, std::size_t axis, T eps = T(1e-5)) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto sp = detail::split_axis(av.shape(), axis);
  check(gain.val().numel() == sp.len && bias.val().numel() == sp.len,
        "layer_norm gain/bias must have the axis length " + std::to_string(sp.len));
  const auto& gv = gain.val();
  const auto& bv = bias.val();
  Tensor<T> out(av.shape());
  std::vector<T> inv_std(sp.outer * sp.inner), means(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double mean = 0;
      for (std::size_t l = 0; l < sp.len; ++l)
        mean += static_cast<double>(av[(o * sp.len + l) * sp.inner + i]);
      mean /= static_cast<double>(sp.len);
      double var = 0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double d = static_cast<double>(av[(o * sp.len + l) * sp.inner + i]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(sp.len);
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
      means[o * sp.inner + i] = static_cast<T>(mean);
      inv_std[o * sp.inner + i] = static_cast<T>(inv);
      for (std::size_t l = 0; l < sp.len; ++l) {
        const std::size_t off = (o * sp.len + l) * sp.inner + i;
        const double xh = (static_cast<double>(av[off]) - mean) * inv;
        out[off] = static_cast<T>(xh * static_cast<double>(gv[l]) + static_cast<double>(bv[l]));
      }
    }
  const std::size_t ida = a.id, idg = gain.id, idb = bias.id;
  auto back = [ida, idg, idb, sp, means, inv_std](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& x = t.value(ida);
    const Tensor<T>& gv2 = t.value(idg);
    Tensor<T>& da = t.grad(ida);
    Tensor<T>& dgain = t.grad(idg);
    Tensor<T>& dbias = t.grad(idb);
    const double n = static_cast<double>(sp.len);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const double mean = static_cast<double>(means[o * sp.inner + i]);
        const double inv = static_cast<double>(inv_std[o * sp.inner + i]);
        double sum_dxh = 0, sum_dxh_xh = 0;
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t off = (o * sp.len + l) * sp.inner + i;
          const double xh = (static_cast<double>(x[off]) - mean) * inv;
          const double dxh = static_cast<double>(g[off]) * static_cast<double>(gv2[l]);
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh;
          dgain[l] += static_cast<T>(static_cast<double>(g[off]) * xh);
          dbias[l] += g[off];
        }
        for (std::size_t l = 0; l < sp.len; ++l) {
          const std::size_t off = (o * sp.len + l) * sp.inner + i;
          const double xh = (static_cast<double>(x[off]) - mean) * inv;
          const double dxh = static_cast<double>(g[off]) * static_cast<double>(gv2[l]);
          da[off] += static_cast<T>(inv * (dxh - sum_dxh / n - xh * sum_dxh_xh / n));
        }
      }
  };
  return {&tape, tape.push(std::move(out), {a.id, gain.id, bias.id}, back)};
}

// -- shape manipulation ---------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> a, std::vector<std::size_t> new_shape) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  check(shape_numel(new_shape) == av.numel(), "reshape " + shape_str(av.shape()) + " -> " +
                                                  shape_str(new_shape) + " changes element count");
  Tensor<T> out(std::move(new_shape), av.vec());
  const std::size_t ida = a.id;
  auto back = [ida](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t i = 0; i < da.numel(); ++i) da[i] += g[i];
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

namespace detail2 {

template <class T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const auto& sh = x.shape();
  check(perm.size() == sh.size(), "permute rank mismatch");
  std::vector<std::size_t> out_shape(sh.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = sh[perm[i]];
  Tensor<T> out(out_shape);
  const auto in_strides = row_major_strides(sh);
  std::vector<std::size_t> src_stride(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) src_stride[i] = in_strides[perm[i]];
  std::vector<std::size_t> idx(out_shape.size(), 0);
  std::size_t src = 0;
  const std::size_t total = out.numel();
  for (std::size_t flat = 0; flat < total; ++flat) {
    out[flat] = x[src];
    for (std::size_t ax = out_shape.size(); ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * out_shape[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

inline std::vector<std::size_t> inverse_perm(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

}  // namespace detail2

template <class T>
Var<T> permute(Var<T> a, std::vector<std::size_t> perm) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = detail2::permute_tensor(a.val(), perm);
  const std::size_t ida = a.id;
  auto back = [ida, perm](Tape<T>& t, std::size_t self) {
    Tensor<T> gp = detail2::permute_tensor(t.grad(self), detail2::inverse_perm(perm));
    t.add_grad(ida, gp);
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

template <class T>
Var<T> broadcast_to(Var<T> a, std::vector<std::size_t> target) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  // validate that av broadcasts to exactly `target`
  const auto bs = broadcast_shape(av.shape(), target);
  check(bs == target, "cannot broadcast " + shape_str(av.shape()) + " to " + shape_str(target));
  Tensor<T> out(target);
  const auto sa = broadcast_strides(av.shape(), target);
  const auto zeros = std::vector<std::size_t>(target.size(), 0);
  detail::for_each_broadcast2<T>(target, sa, zeros,
                                 [&](std::size_t o, std::size_t ia, std::size_t) {
                                   out[o] = av[ia];
                                 });
  const std::size_t ida = a.id;
  auto back = [ida](Tape<T>& t, std::size_t self) {
    t.add_grad(ida, detail::reduce_to_shape(t.grad(self), t.value(ida).shape()));
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

template <class T>
Var<T> concat(std::vector<Var<T>> parts, std::size_t axis) {
  check(!parts.empty(), "concat of zero tensors");
  Tape<T>& tape = *parts[0].tape;
  auto shape = parts[0].val().shape();
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    const auto& s = p.val().shape();
    check(s.size() == shape.size(), "concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis)
        check(s[i] == shape[i], "concat extent mismatch at axis " + std::to_string(i) + ": " +
                                    shape_str(shape) + " vs " + shape_str(s));
    total_axis += s[axis];
  }
  auto out_shape = shape;
  out_shape[axis] = total_axis;
  Tensor<T> out(out_shape);
  const auto spo = detail::split_axis(out_shape, axis);
  std::vector<std::size_t> ids(parts.size());
  std::vector<std::size_t> lens(parts.size());
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    ids[pi] = parts[pi].id;
    lens[pi] = parts[pi].val().shape()[axis];
  }
  std::size_t axis_off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = parts[pi].val();
    for (std::size_t o = 0; o < spo.outer; ++o)
      for (std::size_t l = 0; l < lens[pi]; ++l)
        std::memcpy(out.data() + ((o * spo.len + axis_off + l) * spo.inner),
                    pv.data() + ((o * lens[pi] + l) * spo.inner), spo.inner * sizeof(T));
    axis_off += lens[pi];
  }
  std::vector<std::size_t> parent_ids = ids;
  auto back = [ids, lens, spo](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    std::size_t axis_off2 = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      Tensor<T>& da = t.grad(ids[pi]);
      for (std::size_t o = 0; o < spo.outer; ++o)
        for (std::size_t l = 0; l < lens[pi]; ++l) {
          const T* src = g.data() + ((o * spo.len + axis_off2 + l) * spo.inner);
          T* dst = da.data() + ((o * lens[pi] + l) * spo.inner);
          for (std::size_t i = 0; i < spo.inner; ++i) dst[i] += src[i];
        }
      axis_off2 += lens[pi];
    }
  };
  return {&tape, tape.push(std::move(out), std::move(parent_ids), back)};
}

// -- row gather / scatter (axis 0) ---------------------------------------------

template <class T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> idx) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  check(av.rank() >= 1, "gather_rows needs rank >= 1");
  const std::size_t rows = av.extent(0);
  const std::size_t row_size = av.numel() / std::max<std::size_t>(rows, 1);
  auto out_shape = av.shape();
  out_shape[0] = idx.size();
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] < rows, "gather index " + std::to_string(idx[i]) + " out of " +
                             std::to_string(rows) + " rows");
    std::memcpy(out.data() + i * row_size, av.data() + idx[i] * row_size, row_size * sizeof(T));
  }
  const std::size_t ida = a.id;
  auto back = [ida, idx, row_size](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* src = g.data() + i * row_size;
      T* dst = da.data() + idx[i] * row_size;
      for (std::size_t j = 0; j < row_size; ++j) dst[j] += src[j];
    }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

/// Places row i of `a` at row idx[i] of an otherwise-zero [rows, ...] tensor.
template <class T>
Var<T> scatter_rows(Var<T> a, std::vector<std::size_t> idx, std::size_t rows) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  check(av.extent(0) == idx.size(), "scatter_rows row count mismatch");
  const std::size_t row_size = av.numel() / std::max<std::size_t>(av.extent(0), 1);
  auto out_shape = av.shape();
  out_shape[0] = rows;
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] < rows, "scatter index out of range");
    std::memcpy(out.data() + idx[i] * row_size, av.data() + i * row_size, row_size * sizeof(T));
  }
  const std::size_t ida = a.id;
  auto back = [ida, idx, row_size](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const T* src = g.data() + idx[i] * row_size;
      T* dst = da.data() + i * row_size;
      for (std::size_t j = 0; j < row_size; ++j) dst[j] += src[j];
    }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

// -- patch unfold / pooling ------------------------------------------------------

namespace detail2 {

// C,H,W -> N,C,k*k with row-major patch order and row-major in-patch order
template <class T>
Tensor<T> unfold_tensor(const Tensor<T>& x, std::size_t k) {
  const auto& s = x.shape();
  check(s.size() == 3, "unfold expects a C,H,W cube, got " + shape_str(s));
  const std::size_t C = s[0], H = s[1], W = s[2];
  check(k > 0 && H % k == 0 && W % k == 0,
        "patch size " + std::to_string(k) + " must divide H=" + std::to_string(H) +
            " and W=" + std::to_string(W));
  const std::size_t gh = H / k, gw = W / k, N = gh * gw;
  Tensor<T> out({N, C, k * k});
  for (std::size_t by = 0; by < gh; ++by)
    for (std::size_t bx = 0; bx < gw; ++bx) {
      const std::size_t n = by * gw + bx;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t py = 0; py < k; ++py)
          for (std::size_t px = 0; px < k; ++px)
            out[(n * C + c) * k * k + py * k + px] =
                x[c * H * W + (by * k + py) * W + (bx * k + px)];
    }
  return out;
}

template <class T>
Tensor<T> refold_tensor(const Tensor<T>& p, std::size_t C, std::size_t H, std::size_t W,
                        std::size_t k) {
  const std::size_t gh = H / k, gw = W / k;
  Tensor<T> out({C, H, W});
  for (std::size_t by = 0; by < gh; ++by)
    for (std::size_t bx = 0; bx < gw; ++bx) {
      const std::size_t n = by * gw + bx;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t py = 0; py < k; ++py)
          for (std::size_t px = 0; px < k; ++px)
            out[c * H * W + (by * k + py) * W + (bx * k + px)] =
                p[(n * C + c) * k * k + py * k + px];
    }
  return out;
}

}  // namespace detail2

template <class T>
Var<T> unfold(Var<T> a, std::size_t k) {
  Tape<T>& tape = *a.tape;
  const auto s = a.val().shape();
  Tensor<T> out = detail2::unfold_tensor(a.val(), k);
  const std::size_t ida = a.id;
  auto back = [ida, s, k](Tape<T>& t, std::size_t self) {
    t.add_grad(ida, detail2::refold_tensor(t.grad(self), s[0], s[1], s[2], k));
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

/// Non-overlapping k x k average pool: C,H,W -> C,H/k,W/k.
template <class T>
Var<T> avg_pool2d(Var<T> a, std::size_t k) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto& s = av.shape();
  check(s.size() == 3, "avg_pool2d expects C,H,W");
  const std::size_t C = s[0], H = s[1], W = s[2];
  check(k > 0 && H % k == 0 && W % k == 0, "pool size must divide spatial extents");
  const std::size_t gh = H / k, gw = W / k;
  Tensor<T> out({C, gh, gw});
  const T inv = T(1) / static_cast<T>(k * k);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t by = 0; by < gh; ++by)
      for (std::size_t bx = 0; bx < gw; ++bx) {
        double acc = 0;
        for (std::size_t py = 0; py < k; ++py)
          for (std::size_t px = 0; px < k; ++px)
            acc += static_cast<double>(av[c * H * W + (by * k + py) * W + (bx * k + px)]);
        out[c * gh * gw + by * gw + bx] = static_cast<T>(acc) * inv;
      }
  const std::size_t ida = a.id;
  auto back = [ida, C, H, W, k, gh, gw, inv](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t by = 0; by < gh; ++by)
        for (std::size_t bx = 0; bx < gw; ++bx) {
          const T gv = g[c * gh * gw + by * gw + bx] * inv;
          for (std::size_t py = 0; py < k; ++py)
            for (std::size_t px = 0; px < k; ++px)
              da[c * H * W + (by * k + py) * W + (bx * k + px)] += gv;
        }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

/// Non-overlapping k x k max pool; gradient routes to the first maximum in
/// row-major scan order (ties break toward the lowest linear index).
template <class T>
Var<T> max_pool2d(Var<T> a, std::size_t k) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto& s = av.shape();
  check(s.size() == 3, "max_pool2d expects C,H,W");
  const std::size_t C = s[0], H = s[1], W = s[2];
  check(k > 0 && H % k == 0 && W % k == 0, "pool size must divide spatial extents");
  const std::size_t gh = H / k, gw = W / k;
  Tensor<T> out({C, gh, gw});
  std::vector<std::size_t> arg(C * gh * gw);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t by = 0; by < gh; ++by)
      for (std::size_t bx = 0; bx < gw; ++bx) {
        T best = av[c * H * W + (by * k) * W + bx * k];
        std::size_t best_off = c * H * W + (by * k) * W + bx * k;
        for (std::size_t py = 0; py < k; ++py)
          for (std::size_t px = 0; px < k; ++px) {
            const std::size_t off = c * H * W + (by * k + py) * W + (bx * k + px);
            if (av[off] > best) {
              best = av[off];
              best_off = off;
            }
          }
        out[c * gh * gw + by * gw + bx] = best;
        arg[c * gh * gw + by * gw + bx] = best_off;
      }
  const std::size_t ida = a.id;
  auto back = [ida, arg](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t i = 0; i < arg.size(); ++i) da[arg[i]] += g[i];
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

/// Adaptive average pool C,G,G -> C,g,g; target cell (i,j) averages the source
/// range [floor(i*G/g), floor((i+1)*G/g)) per axis.
template <class T>
Var<T> adaptive_avg_pool2d(Var<T> a, std::size_t g_out) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto& s = av.shape();
  check(s.size() == 3, "adaptive_avg_pool2d expects C,G,G");
  const std::size_t C = s[0], Gh = s[1], Gw = s[2];
  check(g_out >= 1 && g_out <= Gh && g_out <= Gw, "invalid adaptive pool target");
  Tensor<T> out({C, g_out, g_out});
  auto lo = [&](std::size_t i, std::size_t G) { return i * G / g_out; };
  auto hi = [&](std::size_t i, std::size_t G) { return (i + 1) * G / g_out; };
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < g_out; ++i)
      for (std::size_t j = 0; j < g_out; ++j) {
        double acc = 0;
        std::size_t cnt = 0;
        for (std::size_t y = lo(i, Gh); y < hi(i, Gh); ++y)
          for (std::size_t x = lo(j, Gw); x < hi(j, Gw); ++x) {
            acc += static_cast<double>(av[c * Gh * Gw + y * Gw + x]);
            ++cnt;
          }
        out[c * g_out * g_out + i * g_out + j] = static_cast<T>(acc / static_cast<double>(cnt));
      }
  const std::size_t ida = a.id;
  auto back = [ida, C, Gh, Gw, g_out](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    auto lo = [&](std::size_t i, std::size_t G) { return i * G / g_out; };
    auto hi = [&](std::size_t i, std::size_t G) { return (i + 1) * G / g_out; };
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < g_out; ++i)
        for (std::size_t j = 0; j < g_out; ++j) {
          const std::size_t cnt = (hi(i, Gh) - lo(i, Gh)) * (hi(j, Gw) - lo(j, Gw));
          const T gv = g[c * g_out * g_out + i * g_out + j] / static_cast<T>(cnt);
          for (std::size_t y = lo(i, Gh); y < hi(i, Gh); ++y)
            for (std::size_t x = lo(j, Gw); x < hi(j, Gw); ++x)
              da[c * Gh * Gw + y * Gw + x] += gv;
        }
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

template <class T>
Var<T> adaptive_max_pool2d(Var<T> a, std::size_t g_out) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.val();
  const auto& s = av.shape();
  check(s.size() == 3, "adaptive_max_pool2d expects C,G,G");
  const std::size_t C = s[0], Gh = s[1], Gw = s[2];
  check(g_out >= 1 && g_out <= Gh && g_out <= Gw, "invalid adaptive pool target");
  Tensor<T> out({C, g_out, g_out});
  std::vector<std::size_t> arg(C * g_out * g_out);
  auto lo = [&](std::size_t i, std::size_t G) { return i * G / g_out; };
  auto hi = [&](std::size_t i, std::size_t G) { return (i + 1) * G / g_out; };
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < g_out; ++i)
      for (std::size_t j = 0; j < g_out; ++j) {
        std::size_t best_off = c * Gh * Gw + lo(i, Gh) * Gw + lo(j, Gw);
        T best = av[best_off];
        for (std::size_t y = lo(i, Gh); y < hi(i, Gh); ++y)
          for (std::size_t x = lo(j, Gw); x < hi(j, Gw); ++x) {
            const std::size_t off = c * Gh * Gw + y * Gw + x;
            if (av[off] > best) {
              best = av[off];
              best_off = off;
            }
          }
        out[c * g_out * g_out + i * g_out + j] = best;
        arg[c * g_out * g_out + i * g_out + j] = best_off;
      }
  const std::size_t ida = a.id;
  auto back = [ida, arg](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& da = t.grad(ida);
    for (std::size_t i = 0; i < arg.size(); ++i) da[arg[i]] += g[i];
  };
  return {&tape, tape.push(std::move(out), {a.id}, back)};
}

}  // namespace ops

// convenience operators
template <class T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return ops::add(a, b);
}
template <class T>
Var<T> operator-(Var<T> a, Var<T> b) {
  return ops::sub(a, b);
}
template <class T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return ops::mul(a, b);
}
template <class T>
Var<T> operator/(Var<T> a, Var<T> b) {
  return ops::div(a, b);
}

}  // namespace hypermae
