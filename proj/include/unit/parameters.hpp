#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "unit/autodiff/tensor.hpp"
#include "unit/rng.hpp"

namespace unit {

using ad::Shape;
using ad::Tensor;

enum class Init { zeros, ones, xavier_uniform, normal };

/// Named, ordered collection of trainable tensors. Registration order is the
/// canonical order for checkpoints and optimizer sweeps.
template <class T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, Init init, Rng& rng, double stddev = 0.02) {
    if (index_.count(name)) throw std::invalid_argument("parameter registered twice: " + name);
    const std::size_t n = ad::numel(shape);
    std::vector<T> values(n, T(0));
    switch (init) {
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case Init::xavier_uniform: {
        // fan_in is the product of all but the last extent, fan_out the last.
        const double fan_out = static_cast<double>(shape.back());
        const double fan_in = static_cast<double>(n) / fan_out;
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : values) v = static_cast<T>(rng.uniform(-limit, limit));
        break;
      }
      case Init::normal:
        for (auto& v : values) v = static_cast<T>(stddev * rng.normal());
        break;
    }
    Tensor<T> t(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, t);
    return t;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  Tensor<T>& at(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) n += t.size();
    return n;
  }

  std::size_t scalar_count_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_)
      if (name.rfind(prefix, 0) == 0) n += t.size();
    return n;
  }

  void clear_grads() {
    for (auto& [name, t] : entries_) t.clear_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace unit
