#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/boxes.hpp"

namespace unit {

/// Row-major q x M matrix of matching costs (rows: queries, columns: ground truths).
struct CostMatrix {
  std::size_t queries = 0;
  std::size_t targets = 0;
  std::vector<double> values;

  CostMatrix() = default;
  CostMatrix(std::size_t q, std::size_t m, double fill = 0.0) : queries(q), targets(m), values(q * m, fill) {}

  double& operator()(std::size_t query, std::size_t target) { return values[query * targets + target]; }
  double operator()(std::size_t query, std::size_t target) const { return values[query * targets + target]; }
};

/// Injective map from ground-truth index to query index.
struct Assignment {
  std::vector<int> query_of_target;
  double total_cost = 0.0;
};

namespace detail {

/// Shortest-augmenting-path Hungarian algorithm for an n x m cost matrix with
/// n <= m (rows are all assigned). `cost(r, c)` gives the entry.
template <class Cost>
std::vector<int> solve_assignment(std::size_t n, std::size_t m, Cost cost) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  return row_to_col;
}

}  // namespace detail

/// Minimum-cost injective assignment of every ground truth to a distinct query.
/// Among optimal assignments the lexicographically smallest query_of_target
/// vector is returned.
inline Assignment hungarian_match(const CostMatrix& costs) {
  const std::size_t q = costs.queries, m = costs.targets;
  if (m > q) {
    throw std::invalid_argument("hungarian_match: " + std::to_string(m) + " targets exceed " + std::to_string(q) +
                                " queries");
  }
  for (double c : costs.values)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian_match: non-finite cost");
  Assignment result;
  if (m == 0) return result;

  auto optimum = [&](const std::vector<char>& row_done, const std::vector<char>& col_used) {
    std::vector<std::size_t> rows, cols;
    for (std::size_t j = 0; j < m; ++j)
      if (!row_done[j]) rows.push_back(j);
    for (std::size_t i = 0; i < q; ++i)
      if (!col_used[i]) cols.push_back(i);
    if (rows.empty()) return 0.0;
    auto sol = detail::solve_assignment(rows.size(), cols.size(),
                                        [&](std::size_t r, std::size_t c) { return costs(cols[c], rows[r]); });
    double total = 0.0;
    for (std::size_t r = 0; r < rows.size(); ++r) total += costs(cols[sol[r]], rows[r]);
    return total;
  };

  std::vector<char> row_done(m, 0), col_used(q, 0);
  const double best = optimum(row_done, col_used);
  const double tol = 1e-12 * std::max(1.0, std::abs(best));
  result.query_of_target.assign(m, -1);
  double fixed = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    row_done[j] = 1;
    for (std::size_t i = 0; i < q; ++i) {
      if (col_used[i]) continue;
      col_used[i] = 1;
      const double total = fixed + costs(i, j) + optimum(row_done, col_used);
      if (total <= best + tol) {
        result.query_of_target[j] = static_cast<int>(i);
        fixed += costs(i, j);
        break;
      }
      col_used[i] = 0;
    }
  }
  result.total_cost = fixed;
  return result;
}

/// Predictions of one image at one decoder layer, as plain values.
struct PredictionView {
  std::size_t queries = 0;
  std::size_t classes_with_background = 0;
  std::span<const double> probabilities;  // [q, K+1], softmax of class logits
  std::span<const double> boxes;          // [q, 4], (cx, cy, w, h)
};

struct MatchingWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
};

/// Entry (i, j) = -w_cls * p_i(class_j) + w_l1 * |b_i - b_j|_1 - w_giou * GIoU(b_i, b_j).
inline CostMatrix matching_cost(const PredictionView& pred, std::span<const int> target_classes,
                                std::span<const Box> target_boxes, MatchingWeights w) {
  if (target_classes.size() != target_boxes.size()) {
    throw std::invalid_argument("matching_cost: class/box count mismatch");
  }
  CostMatrix cost(pred.queries, target_classes.size());
  for (std::size_t i = 0; i < pred.queries; ++i) {
    const double* b = pred.boxes.data() + 4 * i;
    const Box pb{b[0], b[1], b[2], b[3]};
    for (std::size_t j = 0; j < target_classes.size(); ++j) {
      const Box& tb = target_boxes[j];
      const double p = pred.probabilities[i * pred.classes_with_background + target_classes[j]];
      const double l1 = std::abs(pb.cx - tb.cx) + std::abs(pb.cy - tb.cy) + std::abs(pb.w - tb.w) +
                        std::abs(pb.h - tb.h);
      cost(i, j) = -w.cls * p + w.l1 * l1 - w.giou * giou(pb, tb);
    }
  }
  return cost;
}

}  // namespace unit
