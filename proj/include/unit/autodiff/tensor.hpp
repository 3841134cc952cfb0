#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace unit::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  // Empty until backward reaches this node; that distinguishes "unreached" from "zero".
  std::vector<T> grad;
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

/// Dense row-major array participating in reverse-mode differentiation.
/// Copies share the underlying node; values are treated as immutable once an
/// op has consumed them.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != values.size()) {
      throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)));
  }

  static Tensor full(Shape shape, T v) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// Direct write access; only legitimate for leaves (parameters, inputs)
  /// that are not currently recorded on a tape.
  std::span<T> mutable_data() { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T item() const {
    if (size() != 1) throw std::invalid_argument("item: tensor is not scalar " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void clear_grad() {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }

  const Node<T>* id() const { return node_.get(); }
  const NodePtr<T>& node() const { return node_; }

  /// Detached copy of the values (no tape ancestry, no grad).
  Tensor detach() const { return Tensor(shape(), node_->value); }

 private:
  NodePtr<T> node_;
};

/// Ordered record of executed ops. Each entry's inputs were produced before it,
/// so a reverse sweep is a valid topological order.
template <class T>
class Tape {
 public:
  struct Entry {
    NodePtr<T> output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(NodePtr<T> output, std::function<void()> backward) {
    entries_.push_back({std::move(output), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  bool contains(const Node<T>* n) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [n](const Entry& e) { return e.output.get() == n; });
  }

  static Tape* active() { return current_; }

 private:
  template <class U>
  friend class TapeScope;
  template <class U>
  friend class NoGradScope;
  template <class U>
  friend void backward(Tape<U>&, const Tensor<U>&);

  std::vector<Entry> entries_;
  static inline thread_local Tape* current_ = nullptr;
};

/// Makes a tape the recording target for ops on this thread.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::current_) { Tape<T>::current_ = &tape; }
  ~TapeScope() { Tape<T>::current_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording (evaluation passes).
template <class T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::current_) { Tape<T>::current_ = nullptr; }
  ~NoGradScope() { Tape<T>::current_ = previous_; }

 private:
  Tape<T>* previous_;
};

/// Propagates d(loss)/d(x) to every requires_grad tensor reachable from `loss`.
/// Tensors the loss does not depend on keep an empty grad. The tape is consumed.
template <class T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) {
    tape.clear();
    return;
  }
  loss.node()->grad.assign(1, T(1));
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
  tape.clear();
}

namespace detail {

template <class T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->defined() && t->requires_grad(); });
}

/// Registers `out` as produced by a differentiable op. The closure reads
/// out.node()->grad and accumulates into its inputs.
template <class T, class Fn>
void record(Tensor<T>& out, Fn&& fn) {
  out.set_requires_grad(true);
  Tape<T>::active()->record(out.node(), std::forward<Fn>(fn));
}

/// Gradient buffer of an input, or nullptr when the input does not need one.
template <class T>
std::vector<T>* grad_of(const NodePtr<T>& n) {
  return n->requires_grad ? &n->grad_buffer() : nullptr;
}

}  // namespace detail

}  // namespace unit::ad
