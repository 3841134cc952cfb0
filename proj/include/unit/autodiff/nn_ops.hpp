#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/autodiff/ops.hpp"

namespace unit::ad {

struct Conv2dGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_extent(std::size_t in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// 2-D convolution over NHWC input. `weight` is [kernel, kernel, C_in, C_out],
/// `bias` is [C_out]. Lowered to im2col + GEMM.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geo) {
  if (x.rank() != 4 || weight.rank() != 4) throw std::invalid_argument("conv2d: expects NHWC input and 4-D weight");
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t k = geo.kernel, cout = weight.dim(3);
  if (weight.dim(0) != k || weight.dim(1) != k || weight.dim(2) != cin || bias.size() != cout) {
    throw std::invalid_argument("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                shape_str(x.shape()));
  }
  if (h + 2 * geo.pad < k || w + 2 * geo.pad < k) throw std::invalid_argument("conv2d: input smaller than kernel");
  const std::size_t ho = geo.out_extent(h), wo = geo.out_extent(w);
  const std::size_t patch = k * k * cin, rows = batch * ho * wo;

  std::vector<T> cols(rows * patch, T(0));
  auto xv = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T* dst = cols.data() + ((b * ho + oy) * wo + ox) * patch;
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - static_cast<std::ptrdiff_t>(geo.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - static_cast<std::ptrdiff_t>(geo.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            std::copy_n(xv.begin() + ((b * h + iy) * w + ix) * cin, cin, dst + (ky * k + kx) * cin);
          }
        }
      }

  const auto R = static_cast<Eigen::Index>(rows), P = static_cast<Eigen::Index>(patch),
             O = static_cast<Eigen::Index>(cout);
  std::vector<T> out(rows * cout);
  MatMap<T> y_map(out.data(), R, O);
  y_map.noalias() = ConstMatMap<T>(cols.data(), R, P) * ConstMatMap<T>(weight.data().data(), P, O);
  y_map.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), O);
  Tensor<T> y(Shape{batch, ho, wo, cout}, std::move(out));

  if (detail::recording({&x, &weight, &bias})) {
    detail::record(y, [xn = x.node(), wn = weight.node(), bn = bias.node(), yn = y.node(), cols = std::move(cols),
                       geo, batch, h, w, cin, ho, wo, R, P, O] {
      ConstMatMap<T> g(yn->grad.data(), R, O);
      if (auto* gw = detail::grad_of(wn))
        MatMap<T>(gw->data(), P, O).noalias() += ConstMatMap<T>(cols.data(), R, P).transpose() * g;
      if (auto* gb = detail::grad_of(bn))
        for (Eigen::Index r = 0; r < R; ++r)
          for (Eigen::Index o = 0; o < O; ++o) (*gb)[static_cast<std::size_t>(o)] += g(r, o);
      if (auto* gx = detail::grad_of(xn)) {
        RowMatrix<T> dcols = g * ConstMatMap<T>(wn->value.data(), P, O).transpose();
        const std::size_t k = geo.kernel, patch = static_cast<std::size_t>(P);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const T* src = dcols.data() + ((b * ho + oy) * wo + ox) * patch;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - static_cast<std::ptrdiff_t>(geo.pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - static_cast<std::ptrdiff_t>(geo.pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  T* dst = gx->data() + ((b * h + iy) * w + ix) * cin;
                  const T* s = src + (ky * k + kx) * cin;
                  for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                }
              }
            }
      }
    });
  }
  return y;
}

/// Scaled dot-product attention with `heads` heads over already-projected
/// queries [B, Lq, d], keys [B, Lk, d] and values [B, Lk, d].
/// `key_padding` (size B*Lk, nonzero = excluded) gives masked keys exactly zero
/// weight. When `weights_out` is given it receives the [B, heads, Lq, Lk] weights.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    std::span<const std::uint8_t> key_padding = {}, std::vector<T>* weights_out = nullptr) {
  if (q.rank() != 3 || k.rank() != 3 || v.shape() != k.shape() || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
    throw std::invalid_argument("attention: shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                                shape_str(v.shape()) + " are incompatible");
  }
  const std::size_t batch = q.dim(0), lq = q.dim(1), lk = k.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("attention: width not divisible by head count");
  if (lk == 0) throw std::invalid_argument("attention: empty key sequence");
  if (!key_padding.empty() && key_padding.size() != batch * lk) {
    throw std::invalid_argument("attention: key padding mask has wrong length");
  }
  for (std::size_t b = 0; b < batch && !key_padding.empty(); ++b) {
    bool any = false;
    for (std::size_t j = 0; j < lk; ++j) any = any || !key_padding[b * lk + j];
    if (!any) throw std::invalid_argument("attention: every key is masked for batch element " + std::to_string(b));
  }
  const std::size_t dh = d / heads;
  const T scale_factor = T(1) / std::sqrt(T(dh));
  using Strided = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;
  using MStrided = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
  const auto LQ = static_cast<Eigen::Index>(lq), LK = static_cast<Eigen::Index>(lk),
             DH = static_cast<Eigen::Index>(dh);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  std::vector<T> probs(batch * heads * lq * lk);
  std::vector<T> out(batch * lq * d);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t hh = 0; hh < heads; ++hh) {
      Strided qh(q.data().data() + b * lq * d + hh * dh, LQ, DH, stride);
      Strided kh(k.data().data() + b * lk * d + hh * dh, LK, DH, stride);
      Strided vh(v.data().data() + b * lk * d + hh * dh, LK, DH, stride);
      MatMap<T> p(probs.data() + (b * heads + hh) * lq * lk, LQ, LK);
      p.noalias() = (qh * kh.transpose()) * scale_factor;
      for (std::size_t i = 0; i < lq; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < lk; ++j)
          if (key_padding.empty() || !key_padding[b * lk + j]) mx = std::max(mx, p(i, j));
        T s = 0;
        for (std::size_t j = 0; j < lk; ++j) {
          const bool masked = !key_padding.empty() && key_padding[b * lk + j];
          p(i, j) = masked ? T(0) : std::exp(p(i, j) - mx);
          s += p(i, j);
        }
        for (std::size_t j = 0; j < lk; ++j) p(i, j) /= s;
      }
      MStrided oh(out.data() + b * lq * d + hh * dh, LQ, DH, stride);
      oh.noalias() = p * vh;
    }
  if (weights_out) *weights_out = probs;
  Tensor<T> y(Shape{batch, lq, d}, std::move(out));

  if (detail::recording({&q, &k, &v})) {
    detail::record(y, [qn = q.node(), kn = k.node(), vn = v.node(), yn = y.node(), probs = std::move(probs), batch,
                       heads, lq, lk, d, dh, scale_factor, LQ, LK, DH, stride] {
      auto* gq = detail::grad_of(qn);
      auto* gk = detail::grad_of(kn);
      auto* gv = detail::grad_of(vn);
      RowMatrix<T> dp(LQ, LK);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t hh = 0; hh < heads; ++hh) {
          const std::size_t qoff = b * lq * d + hh * dh, koff = b * lk * d + hh * dh;
          Strided go(yn->grad.data() + qoff, LQ, DH, stride);
          Strided qh(qn->value.data() + qoff, LQ, DH, stride);
          Strided kh(kn->value.data() + koff, LK, DH, stride);
          Strided vh(vn->value.data() + koff, LK, DH, stride);
          ConstMatMap<T> p(probs.data() + (b * heads + hh) * lq * lk, LQ, LK);
          if (gv) MStrided(gv->data() + koff, LK, DH, stride).noalias() += p.transpose() * go;
          if (!gq && !gk) continue;
          dp.noalias() = go * vh.transpose();
          for (Eigen::Index i = 0; i < LQ; ++i) {
            T dot = 0;
            for (Eigen::Index j = 0; j < LK; ++j) dot += dp(i, j) * p(i, j);
            dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)) * scale_factor;
          }
          if (gq) MStrided(gq->data() + qoff, LQ, DH, stride).noalias() += dp * kh;
          if (gk) MStrided(gk->data() + koff, LK, DH, stride).noalias() += dp.transpose() * qh;
        }
    });
  }
  return y;
}

}  // namespace unit::ad
