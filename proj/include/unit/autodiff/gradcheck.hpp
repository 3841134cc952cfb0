#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "unit/autodiff/ops.hpp"

namespace unit::ad {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked_entries = 0;
  double relu_margin = std::numeric_limits<double>::infinity();  // smallest |relu input| seen

  bool near_kink(double margin = 1e-4) const { return relu_margin < margin; }

  bool passed(double tol) const { return max_relative_error < tol; }
};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. With all inputs' gradients stacked into one vector the
/// error is ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor).
/// Inputs the function does not depend on (an attention key bias, say) then
/// contribute only their finite-difference noise.
inline GradCheckResult gradcheck(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
                                 std::vector<Tensor<double>> inputs, double step = 1e-6, double floor = 1e-10) {
  for (auto& t : inputs) t.set_requires_grad(true);
  GradCheckResult result;
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    detail::relu_min_abs_input = &result.relu_margin;
    Tensor<double> loss = fn(inputs);
    detail::relu_min_abs_input = nullptr;
    backward(tape, loss);
  }
  NoGradScope<double> no_grad;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto& t : inputs) {
    std::vector<double> analytic = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                                : std::vector<double>(t.size(), 0.0);
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double up = fn(inputs).item();
      values[i] = orig - step;
      const double down = fn(inputs).item();
      values[i] = orig;
      const double numeric = (up - down) / (2 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    result.checked_entries += values.size();
    t.clear_grad();
  }
  result.max_relative_error = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), floor);
  return result;
}

}  // namespace unit::ad
