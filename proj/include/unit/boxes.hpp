#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/autodiff/ops.hpp"

namespace unit {

/// Axis-aligned box in normalized center form (cx, cy, w, h).
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_xyxy(double x1, double y1, double x2, double y2) {
    return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
  }

  bool operator==(const Box&) const = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  return iw * ih;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Generalized IoU: IoU - (|C| - |A u B|) / |C| with C the smallest enclosing box.
inline double giou(const Box& a, const Box& b) {
  if (!(a.w > 0 && a.h > 0 && b.w > 0 && b.h > 0)) throw std::domain_error("giou: degenerate box");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enclosing = (std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1())) *
                           (std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1()));
  // the hull never has less area than the union; clamp rounding so GIoU <= IoU holds exactly
  return inter / uni - std::max(0.0, enclosing - uni) / enclosing;
}

namespace ad {

/// Row-wise differentiable GIoU between box sets [n, 4] in (cx, cy, w, h) form.
template <class T>
Tensor<T> generalized_iou(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape() || pred.shape().back() != 4) {
    throw std::invalid_argument("generalized_iou: expects matching [n,4] inputs, got " + shape_str(pred.shape()) +
                                " and " + shape_str(target.shape()));
  }
  const std::size_t n = pred.size() / 4;
  auto pv = pred.data();
  auto tv = target.data();
  for (std::size_t i = 0; i < n; ++i)
    if (!(pv[4 * i + 2] > 0 && pv[4 * i + 3] > 0 && tv[4 * i + 2] > 0 && tv[4 * i + 3] > 0))
      throw std::domain_error("generalized_iou: degenerate box at row " + std::to_string(i));

  // Per row: x-extents then y-extents of both boxes.
  struct Axis {
    T a1, a2, b1, b2;
  };
  auto axis = [](const T* a, const T* b, int k) {
    return Axis{a[k] - a[k + 2] / 2, a[k] + a[k + 2] / 2, b[k] - b[k + 2] / 2, b[k] + b[k + 2] / 2};
  };
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Axis x = axis(&pv[4 * i], &tv[4 * i], 0), y = axis(&pv[4 * i], &tv[4 * i], 1);
    const T iw = std::max(T(0), std::min(x.a2, x.b2) - std::max(x.a1, x.b1));
    const T ih = std::max(T(0), std::min(y.a2, y.b2) - std::max(y.a1, y.b1));
    const T inter = iw * ih;
    const T uni = (x.a2 - x.a1) * (y.a2 - y.a1) + (x.b2 - x.b1) * (y.b2 - y.b1) - inter;
    const T enc = (std::max(x.a2, x.b2) - std::min(x.a1, x.b1)) * (std::max(y.a2, y.b2) - std::min(y.a1, y.b1));
    out[i] = inter / uni - T(1) + uni / enc;
  }
  Tensor<T> result(Shape{n}, std::move(out));
  if (detail::recording({&pred, &target})) {
    detail::record(result, [pn = pred.node(), tn = target.node(), rn = result.node(), n, axis] {
      auto* gp = detail::grad_of(pn);
      auto* gt = detail::grad_of(tn);
      for (std::size_t i = 0; i < n; ++i) {
        const T g = rn->grad[i];
        const T* a = &pn->value[4 * i];
        const T* b = &tn->value[4 * i];
        const Axis x = axis(a, b, 0), y = axis(a, b, 1);
        const T iw_raw = std::min(x.a2, x.b2) - std::max(x.a1, x.b1);
        const T ih_raw = std::min(y.a2, y.b2) - std::max(y.a1, y.b1);
        const T iw = std::max(T(0), iw_raw), ih = std::max(T(0), ih_raw);
        const T aw = x.a2 - x.a1, ah = y.a2 - y.a1, bw = x.b2 - x.b1, bh = y.b2 - y.b1;
        const T inter = iw * ih;
        const T uni = aw * ah + bw * bh - inter;
        const T cw = std::max(x.a2, x.b2) - std::min(x.a1, x.b1);
        const T ch = std::max(y.a2, y.b2) - std::min(y.a1, y.b1);
        const T enc = cw * ch;
        // giou = I/U - 1 + U/C with U = Aa + Ab - I.
        const T d_inter = (uni + inter) / (uni * uni) - T(1) / enc;
        const T d_area = -inter / (uni * uni) + T(1) / enc;
        const T d_enc = -uni / (enc * enc);
        // Partials w.r.t. corner coordinates [a1, a2, b1, b2] along one axis.
        auto corners = [&](const Axis& ax, T inter_other, bool inter_active, T self_other_a, T self_other_b,
                           T enc_other, std::array<T, 4>& d) {
          const T di = inter_active ? d_inter * inter_other : T(0);
          // intersection extent = min(a2,b2) - max(a1,b1)
          d = {T(0), T(0), T(0), T(0)};
          if (ax.a2 <= ax.b2) d[1] += di; else d[3] += di;
          if (ax.a1 >= ax.b1) d[0] -= di; else d[2] -= di;
          // areas
          d[1] += d_area * self_other_a;
          d[0] -= d_area * self_other_a;
          d[3] += d_area * self_other_b;
          d[2] -= d_area * self_other_b;
          // enclosing extent = max(a2,b2) - min(a1,b1)
          const T de = d_enc * enc_other;
          if (ax.a2 >= ax.b2) d[1] += de; else d[3] += de;
          if (ax.a1 <= ax.b1) d[0] -= de; else d[2] -= de;
        };
        std::array<T, 4> dx, dy;
        corners(x, ih, iw_raw > 0 && ih_raw > 0, ah, bh, ch, dx);
        corners(y, iw, iw_raw > 0 && ih_raw > 0, aw, bw, cw, dy);
        // corners -> (c, size): x1 = c - s/2, x2 = c + s/2.
        if (gp) {
          (*gp)[4 * i + 0] += g * (dx[0] + dx[1]);
          (*gp)[4 * i + 1] += g * (dy[0] + dy[1]);
          (*gp)[4 * i + 2] += g * (dx[1] - dx[0]) / 2;
          (*gp)[4 * i + 3] += g * (dy[1] - dy[0]) / 2;
        }
        if (gt) {
          (*gt)[4 * i + 0] += g * (dx[2] + dx[3]);
          (*gt)[4 * i + 1] += g * (dy[2] + dy[3]);
          (*gt)[4 * i + 2] += g * (dx[3] - dx[2]) / 2;
          (*gt)[4 * i + 3] += g * (dy[3] - dy[2]) / 2;
        }
      }
    });
  }
  return result;
}

}  // namespace ad

}  // namespace unit
