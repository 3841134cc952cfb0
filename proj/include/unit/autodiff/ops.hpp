#pragma once

// Small products would otherwise take Eigen's coefficient path, whose vectorized
// dot products peel by buffer address and round differently from run to run.
#ifndef EIGEN_GEMM_TO_COEFFBASED_THRESHOLD
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#endif
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/autodiff/tensor.hpp"
#include "unit/rng.hpp"

namespace unit::ad {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

/// Number of times `b` repeats inside `a` when b broadcasts over a's leading
/// dims (b is a shape suffix of a, or a single scalar).
template <class T>
std::size_t broadcast_repeats(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (b.size() == 1) return a.size();
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool suffix = bs.size() <= as.size() && std::equal(bs.rbegin(), bs.rend(), as.rbegin());
  if (!suffix) {
    throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                                shape_str(as));
  }
  return a.size() / b.size();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. The second operand may broadcast over leading dims.

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t reps = detail::broadcast_repeats(a, b, "add");
  const std::size_t m = b.size();
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] += bv[j];
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::recording({&a, &b})) {
    detail::record(y, [an = a.node(), bn = b.node(), yn = y.node(), reps, m] {
      const auto& g = yn->grad;
      if (auto* ga = detail::grad_of(an))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = detail::grad_of(bn))
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g[r * m + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t reps = detail::broadcast_repeats(a, b, "sub");
  const std::size_t m = b.size();
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bv = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] -= bv[j];
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::recording({&a, &b})) {
    detail::record(y, [an = a.node(), bn = b.node(), yn = y.node(), reps, m] {
      const auto& g = yn->grad;
      if (auto* ga = detail::grad_of(an))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = detail::grad_of(bn))
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < m; ++j) (*gb)[j] -= g[r * m + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t reps = detail::broadcast_repeats(a, b, "mul");
  const std::size_t m = b.size();
  std::vector<T> out(a.size());
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = av[r * m + j] * bv[j];
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::recording({&a, &b})) {
    detail::record(y, [an = a.node(), bn = b.node(), yn = y.node(), reps, m] {
      const auto& g = yn->grad;
      if (auto* ga = detail::grad_of(an))
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < m; ++j) (*ga)[r * m + j] += g[r * m + j] * bn->value[j];
      if (auto* gb = detail::grad_of(bn))
        for (std::size_t r = 0; r < reps; ++r)
          for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g[r * m + j] * an->value[r * m + j];
    });
  }
  return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node(), s] {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * yn->grad[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Linear algebra.

/// a[..., k] x b[k, n] -> [..., n]; leading dims of `a` are flattened into rows.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.shape().back() != b.dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  const Eigen::Index k = static_cast<Eigen::Index>(b.dim(0));
  const Eigen::Index n = static_cast<Eigen::Index>(b.dim(1));
  const Eigen::Index m = static_cast<Eigen::Index>(a.size()) / k;
  Shape shape = a.shape();
  shape.back() = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  MatMap<T>(out.data(), m, n).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, n);
  Tensor<T> y(std::move(shape), std::move(out));
  if (detail::recording({&a, &b})) {
    detail::record(y, [an = a.node(), bn = b.node(), yn = y.node(), m, k, n] {
      ConstMatMap<T> g(yn->grad.data(), m, n);
      if (auto* ga = detail::grad_of(an))
        MatMap<T>(ga->data(), m, k).noalias() += g * ConstMatMap<T>(bn->value.data(), k, n).transpose();
      if (auto* gb = detail::grad_of(bn))
        MatMap<T>(gb->data(), k, n).noalias() += ConstMatMap<T>(an->value.data(), m, k).transpose() * g;
    });
  }
  return y;
}

/// x[..., k] w[k, n] + bias[n].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  return add(matmul(x, w), bias);
}

/// Swaps the last two dims.
template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw std::invalid_argument("transpose: rank < 2");
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  const std::size_t batch = a.size() / (r * c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<T> out(a.size());
  auto av = a.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = av[b * r * c + i * c + j];
  Tensor<T> y(std::move(shape), std::move(out));
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node(), batch, r, c] {
      auto& ga = an->grad_buffer();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[b * r * c + i * c + j] += yn->grad[b * r * c + j * r + i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Shape manipulation.

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor<T> y(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node()] {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += yn->grad[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw std::invalid_argument("concat: axis out of range");
  std::size_t outer = 1, inner = 1, total = 0;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
    if (!ok) throw std::invalid_argument("concat: mismatched shapes " + shape_str(ref) + " vs " + shape_str(s));
    widths.push_back(s[axis] * inner);
    total += s[axis];
  }
  Shape shape = ref;
  shape[axis] = total;
  const std::size_t row = total * inner;
  std::vector<T> out(outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto pv = parts[p].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * widths[p], widths[p], out.begin() + o * row + offset);
    offset += widths[p];
  }
  Tensor<T> y(std::move(shape), std::move(out));
  bool rec = Tape<T>::active() != nullptr &&
             std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  if (rec) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    detail::record(y, [nodes, yn = y.node(), widths, outer, row] {
      std::size_t off = 0;
      for (std::size_t p = 0; p < nodes.size(); ++p) {
        if (auto* g = detail::grad_of(nodes[p]))
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < widths[p]; ++j) (*g)[o * widths[p] + j] += yn->grad[o * row + off + j];
        off += widths[p];
      }
    });
  }
  return y;
}

/// Elements [start, start+len) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.rank() || start + len > a.dim(axis)) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                ") out of bounds for axis " + std::to_string(axis) + " of " +
                                shape_str(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t src_row = a.dim(axis) * inner, dst_row = len * inner, off = start * inner;
  Shape shape = a.shape();
  shape[axis] = len;
  std::vector<T> out(outer * dst_row);
  auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(av.begin() + o * src_row + off, dst_row, out.begin() + o * dst_row);
  Tensor<T> y(std::move(shape), std::move(out));
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node(), outer, src_row, dst_row, off] {
      auto& ga = an->grad_buffer();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < dst_row; ++j) ga[o * src_row + off + j] += yn->grad[o * dst_row + j];
    });
  }
  return y;
}

/// Repeats a tensor with leading extent 1 `n` times along axis 0.
template <class T>
Tensor<T> expand(const Tensor<T>& a, std::size_t n) {
  if (a.rank() == 0 || a.dim(0) != 1) throw std::invalid_argument("expand: leading extent must be 1");
  const std::size_t m = a.size();
  Shape shape = a.shape();
  shape[0] = n;
  std::vector<T> out(n * m);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(a.data().begin(), m, out.begin() + r * m);
  Tensor<T> y(std::move(shape), std::move(out));
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node(), n, m] {
      auto& ga = an->grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < m; ++j) ga[j] += yn->grad[r * m + j];
    });
  }
  return y;
}

/// Row lookup: table[V, d] indexed by `ids` -> prefix ++ [d].
template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids, Shape prefix) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be 2-D");
  if (numel(prefix) != ids.size()) throw std::invalid_argument("embedding: prefix does not match id count");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(vocab));
    }
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  prefix.push_back(d);
  Tensor<T> y(std::move(prefix), std::move(out));
  if (detail::recording({&table})) {
    detail::record(y, [tn = table.node(), yn = y.node(), idv = std::vector<int>(ids.begin(), ids.end()), d] {
      auto& gt = tn->grad_buffer();
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gt[idv[i] * d + j] += yn->grad[i * d + j];
    });
  }
  return y;
}

/// Rows of a 2-D tensor selected by index (duplicates allowed).
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const int> rows) {
  return embedding(a, rows, Shape{rows.size()});
}

// ---------------------------------------------------------------------------
// Activations.

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  std::vector<T> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node(), df] {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += yn->grad[i] * df(an->value[i], yn->value[i]);
    });
  }
  return y;
}

namespace detail {
/// When set, relu records the smallest |input| it sees (kink detection for
/// finite-difference checks).
inline thread_local double* relu_min_abs_input = nullptr;
}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  if (double* m = detail::relu_min_abs_input)
    for (T x : a.data()) *m = std::min(*m, static_cast<double>(std::abs(x)));
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

/// Exact GeLU: x * Phi(x), Phi the standard normal CDF.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  for (T v : a.data())
    if (!std::isfinite(v)) throw std::domain_error("gelu: non-finite input");
  return unary(
      a, [](T x) { return x * T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>)); },
      [](T x, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
        const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
        return cdf + x * pdf;
      });
}

/// Inverted dropout. Identity when !train or p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, double p, Rng& rng, bool train) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0,1)");
  if (!train || p == 0.0) return a;
  const T keep_scale = T(1) / T(1.0 - p);
  std::vector<T> mask(a.size());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  return mul(a, Tensor<T>(a.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Normalization and probabilities.

/// Softmax along `axis`, max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  if (axis >= a.rank()) throw std::invalid_argument("softmax: axis out of range");
  const std::size_t n = a.dim(axis);
  if (n == 0) throw std::invalid_argument("softmax: empty axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  std::vector<T> out(a.size());
  auto av = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, av[base + k * inner]);
      T s = 0;
      for (std::size_t k = 0; k < n; ++k) s += (out[base + k * inner] = std::exp(av[base + k * inner] - mx));
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= s;
    }
  Tensor<T> y(a.shape(), std::move(out));
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node(), outer, inner, n] {
      auto& ga = an->grad_buffer();
      const auto& g = yn->grad;
      const auto& p = yn->value;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t base = o * n * inner + i;
          T dot = 0;
          for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * p[base + k * inner];
          for (std::size_t k = 0; k < n; ++k)
            ga[base + k * inner] += p[base + k * inner] * (g[base + k * inner] - dot);
        }
    });
  }
  return y;
}

/// Layer normalization over the last dim: gamma * (x - mean) / sqrt(var + eps) + beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw std::invalid_argument("layer_norm: gamma/beta width " + std::to_string(gamma.size()) +
                                " does not match " + std::to_string(d));
  }
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size()), xhat(x.size()), inv_std(rows);
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mean) * is;
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  Tensor<T> y(x.shape(), std::move(out));
  if (detail::recording({&x, &gamma, &beta})) {
    detail::record(y, [xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node(), xhat = std::move(xhat),
                       inv_std = std::move(inv_std), rows, d] {
      const auto& g = yn->grad;
      auto* gx = detail::grad_of(xn);
      auto* gg = detail::grad_of(gn);
      auto* gb = detail::grad_of(bn);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * d;
        const T* hr = xhat.data() + r * d;
        if (gg)
          for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gr[j] * hr[j];
        if (gb)
          for (std::size_t j = 0; j < d; ++j) (*gb)[j] += gr[j];
        if (gx) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const T dh = gr[j] * gn->value[j];
            mean_dh += dh;
            mean_dh_h += dh * hr[j];
          }
          mean_dh /= T(d);
          mean_dh_h /= T(d);
          for (std::size_t j = 0; j < d; ++j)
            (*gx)[r * d + j] += inv_std[r] * (gr[j] * gn->value[j] - mean_dh - hr[j] * mean_dh_h);
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions and losses.

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  Tensor<T> y = Tensor<T>::scalar(s);
  if (detail::recording({&a})) {
    detail::record(y, [an = a.node(), yn = y.node()] {
      auto& ga = an->grad_buffer();
      for (auto& v : ga) v += yn->grad[0];
    });
  }
  return y;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), T(1) / T(a.size()));
}

/// sum |a - b| over all elements. The subgradient at a == b is 0.
template <class T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("l1_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  Tensor<T> y = Tensor<T>::scalar(s);
  if (detail::recording({&a, &b})) {
    detail::record(y, [an = a.node(), bn = b.node(), yn = y.node()] {
      const T g = yn->grad[0];
      auto* ga = detail::grad_of(an);
      auto* gb = detail::grad_of(bn);
      for (std::size_t i = 0; i < an->value.size(); ++i) {
        const T diff = an->value[i] - bn->value[i];
        const T sg = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        if (ga) (*ga)[i] += g * sg;
        if (gb) (*gb)[i] -= g * sg;
      }
    });
  }
  return y;
}

enum class Reduction { weighted_mean, sum };

/// Cross-entropy of logits[N, C] against class targets, optionally weighted per
/// class: sum_i w[t_i] * -log softmax(logits_i)[t_i], divided by sum_i w[t_i]
/// under weighted_mean.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, std::span<const T> class_weights = {},
                        Reduction reduction = Reduction::weighted_mean) {
  const std::size_t c = logits.shape().back();
  const std::size_t n = logits.size() / c;
  if (targets.size() != n) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(n) + " rows");
  }
  if (!class_weights.empty() && class_weights.size() != c) {
    throw std::invalid_argument("cross_entropy: class weight count does not match class count");
  }
  auto lv = logits.data();
  std::vector<T> probs(logits.size());
  std::vector<T> w(n);
  T loss = 0, wsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0," + std::to_string(c) + ")");
    }
    const T* row = lv.data() + i * c;
    T mx = row[0];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, row[k]);
    T s = 0;
    for (std::size_t k = 0; k < c; ++k) s += (probs[i * c + k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < c; ++k) probs[i * c + k] /= s;
    const T log_p = row[t] - mx - std::log(s);
    w[i] = class_weights.empty() ? T(1) : class_weights[t];
    loss -= w[i] * log_p;
    wsum += w[i];
  }
  const T norm = (reduction == Reduction::weighted_mean && n > 0) ? T(1) / wsum : T(1);
  Tensor<T> y = Tensor<T>::scalar(loss * norm);
  if (detail::recording({&logits})) {
    detail::record(y, [ln = logits.node(), yn = y.node(), probs = std::move(probs), w = std::move(w),
                       tv = std::vector<int>(targets.begin(), targets.end()), norm, n, c] {
      auto& gl = ln->grad_buffer();
      const T g = yn->grad[0] * norm;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k)
          gl[i * c + k] += g * w[i] * (probs[i * c + k] - (static_cast<int>(k) == tv[i] ? T(1) : T(0)));
    });
  }
  return y;
}

}  // namespace unit::ad
