#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "arv/common.hpp"
#include "arv/rng.hpp"

namespace arv {

using ValueId = int32_t;

template <typename T>
struct TensorData {
  std::vector<int64_t> shape;
  std::vector<T> data;

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Eager tape: ops compute forward values immediately and record a backward
// closure. Every op output is scanned for NaN/Inf. Gradient accumulation
// order is fixed by tape order, so identical inputs give bit-identical
// outputs and gradients.
template <typename T>
class Tape {
 public:
  struct Node {
    std::vector<int64_t> shape;
    std::vector<T> value;
    bool needs_grad = false;
    std::function<void(Tape&)> backprop;
    const char* op = "leaf";
  };

  ValueId leaf(std::vector<int64_t> shape, std::vector<T> data, bool needs_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw contract_error(
          cat("leaf: shape ", shape_str(shape), " does not match data length ", data.size()));
    check_finite(data, "leaf");
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
  }

  ValueId constant(std::vector<int64_t> shape, std::vector<T> data) {
    return leaf(std::move(shape), std::move(data), false);
  }

  const std::vector<int64_t>& shape(ValueId id) const { return node(id).shape; }
  const std::vector<T>& value(ValueId id) const { return node(id).value; }
  bool needs_grad(ValueId id) const { return node(id).needs_grad; }
  int64_t numel(ValueId id) const { return shape_numel(node(id).shape); }
  size_t size() const { return nodes_.size(); }

  // Id the next recorded node will get; ops capture it in their closures.
  ValueId next_id() const { return static_cast<ValueId>(nodes_.size()); }

  ValueId record(const char* op, std::vector<int64_t> shape, std::vector<T> value,
                 const std::vector<ValueId>& parents, std::function<void(Tape&)> backprop) {
    check_finite(value, op);
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.op = op;
    for (ValueId p : parents) n.needs_grad = n.needs_grad || node(p).needs_grad;
    if (n.needs_grad) n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    return static_cast<ValueId>(nodes_.size() - 1);
  }

  void backward(ValueId loss) {
    if (numel(loss) != 1) throw contract_error("backward: loss must be scalar");
    grads_.assign(nodes_.size(), {});
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].needs_grad)
        grads_[i].assign(static_cast<size_t>(shape_numel(nodes_[i].shape)), T(0));
    if (grads_[static_cast<size_t>(loss)].empty()) grads_[static_cast<size_t>(loss)].assign(1, T(0));
    grads_[static_cast<size_t>(loss)][0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;)
      if (nodes_[i].needs_grad && nodes_[i].backprop) nodes_[i].backprop(*this);
  }

  // Gradient of the last backward() loss w.r.t. node id. Empty for nodes
  // that do not require grad.
  const std::vector<T>& grad(ValueId id) const {
    if (grads_.empty()) throw contract_error("grad: backward has not run");
    return grads_[static_cast<size_t>(id)];
  }

  std::vector<T>& grad_mut(ValueId id) { return grads_[static_cast<size_t>(id)]; }

  void check_finite(const std::vector<T>& v, const char* op) const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x)))
        throw numeric_error(cat("non-finite value produced by op '", op, "'"));
  }

 private:
  const Node& node(ValueId id) const { return nodes_[static_cast<size_t>(id)]; }
  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace ad_detail {

// C (+)= A * B, row-major. ikp loop keeps the inner stride 1 on B and C.
template <typename T>
void gemm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!accumulate)
    for (int64_t i = 0; i < m * n; ++i) c[i] = T(0);
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T * B, with A m x k, B m x n, C k x n.
template <typename T>
void gemm_at_b(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A * B^T, with A m x k, B n x k, C m x n.
template <typename T>
void gemm_a_bt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

inline std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
  std::vector<int64_t> st(shape.size());
  int64_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    st[i] = acc;
    acc *= shape[i];
  }
  return st;
}

}  // namespace ad_detail

// ---------------------------------------------------------------------------
// Op set: matmul, add, mul, scalar_scale, reshape, transpose, gather_rows,
// concat, reduce_mean, layernorm, gelu, masked_softmax, mse.
// ---------------------------------------------------------------------------

// [m,k]x[k,n] -> [m,n], or batched [B,m,k]x[B,k,n] -> [B,m,n].
template <typename T>
ValueId matmul(Tape<T>& t, ValueId a, ValueId b) {
  const auto sa = t.shape(a);
  const auto sb = t.shape(b);
  int64_t batch = 1, m = 0, k = 0, n = 0;
  bool batched = false;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0];
    k = sa[1];
    n = sb[1];
    if (sb[0] != k)
      throw contract_error(cat("matmul: inner dims differ ", shape_str(sa), " x ", shape_str(sb)));
  } else if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sa[2] != sb[1])
      throw contract_error(cat("matmul: bad batched shapes ", shape_str(sa), " x ", shape_str(sb)));
    batched = true;
    batch = sa[0];
    m = sa[1];
    k = sa[2];
    n = sb[2];
  } else {
    throw contract_error(cat("matmul: unsupported ranks ", shape_str(sa), " x ", shape_str(sb)));
  }

  std::vector<T> out(static_cast<size_t>(batch * m * n));
  {
    const T* pa = t.value(a).data();
    const T* pb = t.value(b).data();
    for (int64_t bb = 0; bb < batch; ++bb)
      ad_detail::gemm(pa + bb * m * k, pb + bb * k * n, out.data() + bb * m * n, m, k, n, false);
  }

  const ValueId out_id = t.next_id();
  auto oshape = batched ? std::vector<int64_t>{batch, m, n} : std::vector<int64_t>{m, n};
  return t.record("matmul", std::move(oshape), std::move(out), {a, b},
                  [a, b, out_id, batch, m, k, n](Tape<T>& tp) {
                    const T* g = tp.grad(out_id).data();
                    if (tp.needs_grad(a)) {
                      T* ga = tp.grad_mut(a).data();
                      const T* pb = tp.value(b).data();
                      for (int64_t bb = 0; bb < batch; ++bb)
                        ad_detail::gemm_a_bt(g + bb * m * n, pb + bb * k * n, ga + bb * m * k, m,
                                             n, k);
                    }
                    if (tp.needs_grad(b)) {
                      T* gb = tp.grad_mut(b).data();
                      const T* pa = tp.value(a).data();
                      for (int64_t bb = 0; bb < batch; ++bb)
                        ad_detail::gemm_at_b(pa + bb * m * k, g + bb * m * n, gb + bb * k * n, m,
                                             k, n);
                    }
                  });
}

namespace ad_detail {
// b broadcasts against a when b's shape equals a trailing suffix of a's.
template <typename T>
int64_t broadcast_rows(const Tape<T>& t, ValueId a, ValueId b, const char* op) {
  const auto& sa = t.shape(a);
  const auto& sb = t.shape(b);
  if (sb.size() > sa.size())
    throw contract_error(cat(op, ": shapes ", shape_str(sa), " vs ", shape_str(sb)));
  for (size_t i = 0; i < sb.size(); ++i)
    if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
      throw contract_error(cat(op, ": shape mismatch ", shape_str(sa), " vs ", shape_str(sb)));
  return shape_numel(sa) / shape_numel(sb);
}
}  // namespace ad_detail

// Elementwise a + b; b may broadcast over leading dims of a.
template <typename T>
ValueId add(Tape<T>& t, ValueId a, ValueId b) {
  const int64_t rows = ad_detail::broadcast_rows(t, a, b, "add");
  const int64_t cols = t.numel(b);
  std::vector<T> out(t.value(a));
  {
    const T* pb = t.value(b).data();
    for (int64_t r = 0; r < rows; ++r) {
      T* prow = out.data() + r * cols;
      for (int64_t j = 0; j < cols; ++j) prow[j] += pb[j];
    }
  }
  const ValueId out_id = t.next_id();
  return t.record("add", t.shape(a), std::move(out), {a, b}, [a, b, out_id, rows, cols](Tape<T>& tp) {
    const T* g = tp.grad(out_id).data();
    if (tp.needs_grad(a)) {
      T* ga = tp.grad_mut(a).data();
      const int64_t n = rows * cols;
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (tp.needs_grad(b)) {
      T* gb = tp.grad_mut(b).data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* grow = g + r * cols;
        for (int64_t j = 0; j < cols; ++j) gb[j] += grow[j];
      }
    }
  });
}

// Elementwise a * b; b may broadcast over leading dims of a.
template <typename T>
ValueId mul(Tape<T>& t, ValueId a, ValueId b) {
  const int64_t rows = ad_detail::broadcast_rows(t, a, b, "mul");
  const int64_t cols = t.numel(b);
  std::vector<T> out(t.value(a));
  {
    const T* pb = t.value(b).data();
    for (int64_t r = 0; r < rows; ++r) {
      T* prow = out.data() + r * cols;
      for (int64_t j = 0; j < cols; ++j) prow[j] *= pb[j];
    }
  }
  const ValueId out_id = t.next_id();
  return t.record("mul", t.shape(a), std::move(out), {a, b}, [a, b, out_id, rows, cols](Tape<T>& tp) {
    const T* g = tp.grad(out_id).data();
    const T* pa = tp.value(a).data();
    const T* pb = tp.value(b).data();
    if (tp.needs_grad(a)) {
      T* ga = tp.grad_mut(a).data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < cols; ++j) ga[r * cols + j] += g[r * cols + j] * pb[j];
    }
    if (tp.needs_grad(b)) {
      T* gb = tp.grad_mut(b).data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j] * pa[r * cols + j];
    }
  });
}

template <typename T>
ValueId scalar_scale(Tape<T>& t, ValueId a, double c) {
  std::vector<T> out(t.value(a));
  for (T& x : out) x = static_cast<T>(x * c);
  const ValueId out_id = t.next_id();
  return t.record("scalar_scale", t.shape(a), std::move(out), {a}, [a, out_id, c](Tape<T>& tp) {
    if (!tp.needs_grad(a)) return;
    const T* g = tp.grad(out_id).data();
    T* ga = tp.grad_mut(a).data();
    const int64_t n = tp.numel(a);
    for (int64_t i = 0; i < n; ++i) ga[i] += static_cast<T>(g[i] * c);
  });
}

template <typename T>
ValueId reshape(Tape<T>& t, ValueId a, std::vector<int64_t> new_shape) {
  if (shape_numel(new_shape) != t.numel(a))
    throw contract_error(cat("reshape: cannot reshape ", shape_str(t.shape(a)), " to ",
                             shape_str(new_shape)));
  const ValueId out_id = t.next_id();
  return t.record("reshape", std::move(new_shape), t.value(a), {a}, [a, out_id](Tape<T>& tp) {
    if (!tp.needs_grad(a)) return;
    const T* g = tp.grad(out_id).data();
    T* ga = tp.grad_mut(a).data();
    const int64_t n = tp.numel(a);
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
  });
}

namespace ad_detail {
template <typename T>
void permute_copy(const std::vector<int64_t>& in_shape, const std::vector<size_t>& perm,
                  const T* src, T* dst) {
  const size_t nd = in_shape.size();
  std::vector<int64_t> out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = strides_of(in_shape);
  const auto out_strides = strides_of(out_shape);
  const int64_t n = shape_numel(in_shape);
  std::vector<int64_t> idx(nd, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    // idx = multi-index into the output
    int64_t src_off = 0;
    for (size_t i = 0; i < nd; ++i) src_off += idx[i] * in_strides[perm[i]];
    dst[flat] = src[src_off];
    for (size_t i = nd; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
}
}  // namespace ad_detail

// General axis permutation.
template <typename T>
ValueId transpose(Tape<T>& t, ValueId a, std::vector<size_t> perm) {
  const auto& sa = t.shape(a);
  if (perm.size() != sa.size()) throw contract_error("transpose: perm rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (size_t p : perm) {
    if (p >= perm.size() || seen[p]) throw contract_error("transpose: invalid permutation");
    seen[p] = true;
  }
  std::vector<int64_t> oshape(sa.size());
  for (size_t i = 0; i < sa.size(); ++i) oshape[i] = sa[perm[i]];
  std::vector<T> out(static_cast<size_t>(shape_numel(oshape)));
  ad_detail::permute_copy(sa, perm, t.value(a).data(), out.data());

  const ValueId out_id = t.next_id();
  return t.record("transpose", std::move(oshape), std::move(out), {a},
                  [a, out_id, perm](Tape<T>& tp) {
                    if (!tp.needs_grad(a)) return;
                    // gradient flows through the inverse permutation
                    std::vector<size_t> inv(perm.size());
                    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
                    std::vector<T> gp(static_cast<size_t>(tp.numel(a)));
                    ad_detail::permute_copy(tp.shape(out_id), inv, tp.grad(out_id).data(),
                                            gp.data());
                    T* ga = tp.grad_mut(a).data();
                    for (size_t i = 0; i < gp.size(); ++i) ga[i] += gp[i];
                  });
}

// Select rows of a 2-D tensor. Backward scatter-adds in row order.
template <typename T>
ValueId gather_rows(Tape<T>& t, ValueId a, std::vector<int32_t> indices) {
  const auto& sa = t.shape(a);
  if (sa.size() != 2) throw contract_error("gather_rows: input must be 2-D");
  const int64_t n = sa[0], d = sa[1];
  for (int32_t ix : indices)
    if (ix < 0 || ix >= n) throw contract_error(cat("gather_rows: index ", ix, " out of range"));
  const int64_t m = static_cast<int64_t>(indices.size());
  std::vector<T> out(static_cast<size_t>(m * d));
  {
    const T* pa = t.value(a).data();
    for (int64_t i = 0; i < m; ++i)
      std::copy_n(pa + int64_t(indices[static_cast<size_t>(i)]) * d, d, out.data() + i * d);
  }
  auto idx = std::make_shared<std::vector<int32_t>>(std::move(indices));
  const ValueId out_id = t.next_id();
  return t.record("gather_rows", {m, d}, std::move(out), {a}, [a, out_id, idx, d](Tape<T>& tp) {
    if (!tp.needs_grad(a)) return;
    const T* g = tp.grad(out_id).data();
    T* ga = tp.grad_mut(a).data();
    for (size_t i = 0; i < idx->size(); ++i) {
      T* row = ga + int64_t((*idx)[i]) * d;
      const T* grow = g + int64_t(i) * d;
      for (int64_t j = 0; j < d; ++j) row[j] += grow[j];
    }
  });
}

// Concatenate along axis 0; inputs must agree on trailing dims.
template <typename T>
ValueId concat(Tape<T>& t, const std::vector<ValueId>& parts) {
  if (parts.empty()) throw contract_error("concat: no inputs");
  auto base = t.shape(parts[0]);
  if (base.empty()) throw contract_error("concat: scalars not supported");
  int64_t rows = 0;
  for (ValueId p : parts) {
    const auto& sp = t.shape(p);
    if (sp.size() != base.size())
      throw contract_error("concat: rank mismatch");
    for (size_t i = 1; i < base.size(); ++i)
      if (sp[i] != base[i]) throw contract_error("concat: trailing dims differ");
    rows += sp[0];
  }
  std::vector<int64_t> oshape = base;
  oshape[0] = rows;
  std::vector<T> out;
  out.reserve(static_cast<size_t>(shape_numel(oshape)));
  for (ValueId p : parts) out.insert(out.end(), t.value(p).begin(), t.value(p).end());

  const ValueId out_id = t.next_id();
  return t.record("concat", std::move(oshape), std::move(out), parts,
                  [parts, out_id](Tape<T>& tp) {
                    const T* g = tp.grad(out_id).data();
                    int64_t off = 0;
                    for (ValueId p : parts) {
                      const int64_t n = tp.numel(p);
                      if (tp.needs_grad(p)) {
                        T* gp = tp.grad_mut(p).data();
                        for (int64_t i = 0; i < n; ++i) gp[i] += g[off + i];
                      }
                      off += n;
                    }
                  });
}

template <typename T>
ValueId reduce_mean(Tape<T>& t, ValueId a) {
  const int64_t n = t.numel(a);
  double acc = 0.0;
  for (const T& x : t.value(a)) acc += static_cast<double>(x);
  const T meanv = static_cast<T>(acc / static_cast<double>(n));
  const ValueId out_id = t.next_id();
  return t.record("reduce_mean", {1}, {meanv}, {a}, [a, out_id, n](Tape<T>& tp) {
    if (!tp.needs_grad(a)) return;
    const T g = tp.grad(out_id)[0];
    const T u = static_cast<T>(g / static_cast<T>(n));
    T* ga = tp.grad_mut(a).data();
    for (int64_t i = 0; i < n; ++i) ga[i] += u;
  });
}

// Layer normalization over the last axis, population variance.
template <typename T>
ValueId layernorm(Tape<T>& t, ValueId x, ValueId gamma, ValueId beta, double eps) {
  const auto& sx = t.shape(x);
  if (sx.empty()) throw contract_error("layernorm: scalar input");
  const int64_t d = sx.back();
  if (t.shape(gamma) != std::vector<int64_t>{d} || t.shape(beta) != std::vector<int64_t>{d})
    throw contract_error("layernorm: gamma/beta must be [d]");
  const int64_t rows = t.numel(x) / d;

  std::vector<T> out(static_cast<size_t>(rows * d));
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(rows * d));
  auto inv_sd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  {
    const T* px = t.value(x).data();
    const T* pg = t.value(gamma).data();
    const T* pb = t.value(beta).data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = px + r * d;
      double mean = 0.0;
      for (int64_t j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) {
        const double dj = static_cast<double>(row[j]) - mean;
        var += dj * dj;
      }
      var /= static_cast<double>(d);
      const double isd = 1.0 / std::sqrt(var + eps);
      (*inv_sd)[static_cast<size_t>(r)] = static_cast<T>(isd);
      for (int64_t j = 0; j < d; ++j) {
        const T xh = static_cast<T>((static_cast<double>(row[j]) - mean) * isd);
        (*xhat)[static_cast<size_t>(r * d + j)] = xh;
        out[static_cast<size_t>(r * d + j)] = pg[j] * xh + pb[j];
      }
    }
  }

  const ValueId out_id = t.next_id();
  return t.record(
      "layernorm", sx, std::move(out), {x, gamma, beta},
      [x, gamma, beta, out_id, rows, d, xhat, inv_sd](Tape<T>& tp) {
        const T* g = tp.grad(out_id).data();
        const T* pg = tp.value(gamma).data();
        const bool need_x = tp.needs_grad(x);
        const bool need_g = tp.needs_grad(gamma);
        const bool need_b = tp.needs_grad(beta);
        T* gx = need_x ? tp.grad_mut(x).data() : nullptr;
        T* gg = need_g ? tp.grad_mut(gamma).data() : nullptr;
        T* gb = need_b ? tp.grad_mut(beta).data() : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
          const T* grow = g + r * d;
          const T* xh = xhat->data() + r * d;
          if (need_g)
            for (int64_t j = 0; j < d; ++j) gg[j] += grow[j] * xh[j];
          if (need_b)
            for (int64_t j = 0; j < d; ++j) gb[j] += grow[j];
          if (need_x) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (int64_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(grow[j]) * static_cast<double>(pg[j]);
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * static_cast<double>(xh[j]);
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            const double isd = static_cast<double>((*inv_sd)[static_cast<size_t>(r)]);
            for (int64_t j = 0; j < d; ++j) {
              const double dxh = static_cast<double>(grow[j]) * static_cast<double>(pg[j]);
              gx[r * d + j] += static_cast<T>(
                  isd * (dxh - mean_dxhat - static_cast<double>(xh[j]) * mean_dxhat_xhat));
            }
          }
        }
      });
}

namespace ad_detail {
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

inline double gelu_fwd(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
}
inline double gelu_bwd(double x) {
  const double u = kGeluK * (x + kGeluC * x * x * x);
  const double th = std::tanh(u);
  const double sech2 = 1.0 - th * th;
  return 0.5 * (1.0 + th) + 0.5 * x * sech2 * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
}
}  // namespace ad_detail

// GELU, tanh approximation.
template <typename T>
ValueId gelu(Tape<T>& t, ValueId a) {
  std::vector<T> out(t.value(a));
  for (T& x : out) x = static_cast<T>(ad_detail::gelu_fwd(static_cast<double>(x)));
  const ValueId out_id = t.next_id();
  return t.record("gelu", t.shape(a), std::move(out), {a}, [a, out_id](Tape<T>& tp) {
    if (!tp.needs_grad(a)) return;
    const T* g = tp.grad(out_id).data();
    const T* px = tp.value(a).data();
    T* ga = tp.grad_mut(a).data();
    const int64_t n = tp.numel(a);
    for (int64_t i = 0; i < n; ++i)
      ga[i] += static_cast<T>(static_cast<double>(g[i]) *
                              ad_detail::gelu_bwd(static_cast<double>(px[i])));
  });
}

// Softmax over the last axis with a boolean admissibility mask. Masked
// entries get probability exactly 0 (no exp is evaluated for them); rows are
// max-subtracted over the admissible set. The mask spans the last two dims
// and broadcasts over any leading batch dims.
template <typename T>
ValueId masked_softmax(Tape<T>& t, ValueId scores, std::shared_ptr<const BoolMatrix> mask) {
  const auto& ss = t.shape(scores);
  if (ss.size() < 2) throw contract_error("masked_softmax: scores must have rank >= 2");
  const int64_t k = ss[ss.size() - 1];
  const int64_t q = ss[ss.size() - 2];
  if (!mask || mask->rows != q || mask->cols != k)
    throw contract_error(cat("masked_softmax: mask ", mask ? mask->rows : -1, "x",
                             mask ? mask->cols : -1, " does not match scores ", shape_str(ss)));
  const int64_t batch = t.numel(scores) / (q * k);

  std::vector<T> out(static_cast<size_t>(t.numel(scores)), T(0));
  {
    const T* ps = t.value(scores).data();
    for (int64_t bb = 0; bb < batch; ++bb)
      for (int64_t r = 0; r < q; ++r) {
        const T* srow = ps + (bb * q + r) * k;
        T* orow = out.data() + (bb * q + r) * k;
        double maxv = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (int64_t j = 0; j < k; ++j)
          if (mask->at(r, j)) {
            any = true;
            maxv = std::max(maxv, static_cast<double>(srow[j]));
          }
        if (!any)
          throw contract_error(cat("masked_softmax: row ", r, " admits no entries"));
        double denom = 0.0;
        for (int64_t j = 0; j < k; ++j)
          if (mask->at(r, j)) {
            const double e = std::exp(static_cast<double>(srow[j]) - maxv);
            orow[j] = static_cast<T>(e);
            denom += e;
          }
        for (int64_t j = 0; j < k; ++j)
          if (mask->at(r, j)) orow[j] = static_cast<T>(static_cast<double>(orow[j]) / denom);
      }
  }

  const ValueId out_id = t.next_id();
  return t.record("masked_softmax", ss, std::move(out), {scores},
                  [scores, out_id, batch, q, k](Tape<T>& tp) {
                    if (!tp.needs_grad(scores)) return;
                    // ds_j = p_j * (g_j - sum_i g_i p_i); masked p_j are
                    // exactly 0, so masked gradients are exactly 0.
                    const T* g = tp.grad(out_id).data();
                    const T* p = tp.value(out_id).data();
                    T* gs = tp.grad_mut(scores).data();
                    for (int64_t row = 0; row < batch * q; ++row) {
                      const T* prow = p + row * k;
                      const T* grow = g + row * k;
                      double dot = 0.0;
                      for (int64_t j = 0; j < k; ++j)
                        dot += static_cast<double>(grow[j]) * static_cast<double>(prow[j]);
                      T* gsrow = gs + row * k;
                      for (int64_t j = 0; j < k; ++j)
                        gsrow[j] += static_cast<T>(static_cast<double>(prow[j]) *
                                                   (static_cast<double>(grow[j]) - dot));
                    }
                  });
}

template <typename T>
ValueId masked_softmax(Tape<T>& t, ValueId scores, const BoolMatrix& mask) {
  return masked_softmax(t, scores, std::make_shared<const BoolMatrix>(mask));
}

// Mean squared error over all elements.
template <typename T>
ValueId mse(Tape<T>& t, ValueId pred, ValueId target) {
  if (t.shape(pred) != t.shape(target))
    throw contract_error(cat("mse: shape mismatch ", shape_str(t.shape(pred)), " vs ",
                             shape_str(t.shape(target))));
  const int64_t n = t.numel(pred);
  double acc = 0.0;
  {
    const T* pp = t.value(pred).data();
    const T* pt = t.value(target).data();
    for (int64_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(pp[i]) - static_cast<double>(pt[i]);
      acc += d * d;
    }
  }
  const T lossv = static_cast<T>(acc / static_cast<double>(n));
  const ValueId out_id = t.next_id();
  return t.record("mse", {1}, {lossv}, {pred, target}, [pred, target, out_id, n](Tape<T>& tp) {
    const T g = tp.grad(out_id)[0];
    const T* pp = tp.value(pred).data();
    const T* pt = tp.value(target).data();
    const T scale = static_cast<T>(2.0 * static_cast<double>(g) / static_cast<double>(n));
    if (tp.needs_grad(pred)) {
      T* gp = tp.grad_mut(pred).data();
      for (int64_t i = 0; i < n; ++i) gp[i] += scale * (pp[i] - pt[i]);
    }
    if (tp.needs_grad(target)) {
      T* gt = tp.grad_mut(target).data();
      for (int64_t i = 0; i < n; ++i) gt[i] -= scale * (pp[i] - pt[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

struct FdOptions {
  double h = 1e-5;
  double tol = 1e-6;
  // Relative error = |a - n| / max(|a|, |n|, denom_floor). Central
  // differences carry a rounding floor of about eps*|f|/h in absolute terms,
  // so coordinates whose gradient sits below denom_floor are effectively
  // checked absolutely, at denom_floor * tol.
  double denom_floor = 1e-4;
  int64_t max_coords = -1;  // < 0: check every coordinate
  uint64_t seed = 0x5eed;
};

struct FdCoord {
  size_t tensor = 0;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct FdReport {
  int64_t coords_checked = 0;
  double max_rel_err = 0.0;
  bool pass = false;
  FdCoord worst;
};

// Builds the loss twice per probed coordinate (central differences) and once
// with gradients enabled for the analytic side. The loss builder must be a
// deterministic function of the parameter values.
template <typename T>
FdReport finite_diff_check(
    const std::function<ValueId(Tape<T>&, const std::vector<ValueId>&)>& build_loss,
    std::vector<TensorData<T>> params, const FdOptions& opt = {}) {
  // Analytic gradients.
  std::vector<std::vector<T>> analytic;
  {
    Tape<T> tape;
    std::vector<ValueId> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.leaf(p.shape, p.data, true));
    const ValueId loss = build_loss(tape, ids);
    tape.backward(loss);
    for (ValueId id : ids) analytic.push_back(tape.grad(id));
  }

  auto eval = [&](const std::vector<TensorData<T>>& ps) -> double {
    Tape<T> tape;
    std::vector<ValueId> ids;
    ids.reserve(ps.size());
    for (const auto& p : ps) ids.push_back(tape.leaf(p.shape, p.data, false));
    return static_cast<double>(tape.value(build_loss(tape, ids))[0]);
  };

  // Coordinate selection.
  int64_t total = 0;
  for (const auto& p : params) total += p.numel();
  std::vector<std::pair<size_t, int64_t>> coords;
  if (opt.max_coords < 0 || opt.max_coords >= total) {
    for (size_t ti = 0; ti < params.size(); ++ti)
      for (int64_t i = 0; i < params[ti].numel(); ++i) coords.push_back({ti, i});
  } else {
    Rng rng(opt.seed);
    for (int64_t flat : rng.sample_without_replacement(total, opt.max_coords)) {
      size_t ti = 0;
      int64_t rem = flat;
      while (rem >= params[ti].numel()) {
        rem -= params[ti].numel();
        ++ti;
      }
      coords.push_back({ti, rem});
    }
  }

  FdReport rep;
  for (const auto& [ti, i] : coords) {
    const T orig = params[ti].data[static_cast<size_t>(i)];
    params[ti].data[static_cast<size_t>(i)] = static_cast<T>(static_cast<double>(orig) + opt.h);
    const double fp = eval(params);
    params[ti].data[static_cast<size_t>(i)] = static_cast<T>(static_cast<double>(orig) - opt.h);
    const double fm = eval(params);
    params[ti].data[static_cast<size_t>(i)] = orig;

    FdCoord c;
    c.tensor = ti;
    c.index = i;
    c.numeric = (fp - fm) / (2.0 * opt.h);
    c.analytic = static_cast<double>(analytic[ti][static_cast<size_t>(i)]);
    const double denom = std::max({std::fabs(c.analytic), std::fabs(c.numeric), opt.denom_floor});
    c.rel_err = std::fabs(c.analytic - c.numeric) / denom;
    ++rep.coords_checked;
    if (c.rel_err >= rep.max_rel_err) {
      rep.max_rel_err = c.rel_err;
      rep.worst = c;
    }
  }
  rep.pass = rep.max_rel_err < opt.tol;
  return rep;
}

}  // namespace arv
