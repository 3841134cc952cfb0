#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/parameters.hpp"
#include "unit/rng.hpp"

namespace unit {

struct ScheduleConfig {
  double lr_max = 5e-5;
  std::size_t warmup = 2000;
  std::size_t total = 20000;
};

/// Linear warmup from 0 to lr_max, then half-cosine decay to 0 at `total`.
inline double lr_schedule(std::size_t t, const ScheduleConfig& cfg) {
  if (cfg.warmup >= cfg.total) throw std::invalid_argument("lr_schedule: warmup must be shorter than the run");
  if (t >= cfg.total) return 0.0;
  if (t < cfg.warmup) return cfg.lr_max * static_cast<double>(t) / static_cast<double>(cfg.warmup);
  const double progress = static_cast<double>(t - cfg.warmup) / static_cast<double>(cfg.total - cfg.warmup);
  return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Checks a sampling distribution and rescales it to sum to 1. Sums off by more
/// than 1e-9 are rejected unless they are within `slack` of 1 (rounded table rows
/// such as 0.33/0.33/0.33).
inline std::vector<double> normalized_probabilities(const std::vector<double>& p, double slack = 0.0) {
  if (p.empty()) throw std::invalid_argument("task probabilities: empty");
  double s = 0;
  for (double v : p) {
    if (!(v >= 0) || !std::isfinite(v)) throw std::invalid_argument("task probabilities: negative or non-finite entry");
    s += v;
  }
  if (!(s > 0)) throw std::invalid_argument("task probabilities: all zero");
  if (std::abs(s - 1.0) > std::max(1e-9, slack)) {
    throw std::invalid_argument("task probabilities sum to " + std::to_string(s) + ", not 1");
  }
  std::vector<double> out(p);
  for (double& v : out) v /= s;
  return out;
}

/// One categorical draw; `probabilities` must already sum to 1 within 1e-9.
inline std::size_t sample_task(Rng& rng, const std::vector<double>& probabilities) {
  const auto p = normalized_probabilities(probabilities);
  const double u = rng.uniform();
  double acc = 0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Decoupled-weight-decay Adam whose update, moments and step counter are left
/// untouched for parameters the current loss did not reach.
template <class T>
class AdamW {
 public:
  struct Slot {
    std::vector<T> m, v;
    std::size_t step = 0;
  };

  AdamW() = default;
  AdamW(const ParameterStore<T>& store, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& [name, t] : store.entries()) slots_.push_back({std::vector<T>(t.size()), std::vector<T>(t.size()), 0});
  }

  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<Slot>& slots() { return slots_; }

  /// `used[i]` selects parameter i of `store`; its gradient must be present.
  void step(ParameterStore<T>& store, const std::vector<char>& used, double lr) {
    auto& entries = store.entries();
    if (entries.size() != slots_.size() || used.size() != slots_.size())
      throw std::invalid_argument("AdamW: parameter set does not match optimizer state");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!used[i]) continue;
      auto& [name, param] = entries[i];
      Slot& s = slots_[i];
      if (s.m.size() != param.size()) throw std::invalid_argument("AdamW: shape mismatch for " + name);
      if (!param.has_grad()) throw std::invalid_argument("AdamW: used parameter without gradient: " + name);
      ++s.step;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.step));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.step));
      auto w = param.mutable_data();
      auto g = param.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double m = cfg_.beta1 * s.m[j] + (1 - cfg_.beta1) * gj;
        const double v = cfg_.beta2 * s.v[j] + (1 - cfg_.beta2) * gj * gj;
        s.m[j] = static_cast<T>(m);
        s.v[j] = static_cast<T>(v);
        double x = static_cast<double>(w[j]) * (1 - lr * cfg_.weight_decay);
        x -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        w[j] = static_cast<T>(x);
      }
    }
  }

  /// Marks parameters that received a gradient in the last backward pass.
  static std::vector<char> used_set(const ParameterStore<T>& store) {
    std::vector<char> used;
    used.reserve(store.size());
    for (const auto& [name, t] : store.entries()) used.push_back(t.has_grad() ? 1 : 0);
    return used;
  }

 private:
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
};

}  // namespace unit
