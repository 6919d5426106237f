// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace netmamba::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

[[noreturn]] void throw_shape_error(const std::string& op, const Shape& a, const Shape& b);

/// Process-wide accounting of bytes held by tensor storage. `peak()` is the
/// high-water mark since the last `reset_peak()`.
class MemoryTracker {
 public:
  static void add(std::size_t bytes);
  static void sub(std::size_t bytes);
  static std::size_t live();
  static std::size_t peak();
  static void reset_peak();
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;
  TrackingAllocator() = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    MemoryTracker::add(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    MemoryTracker::sub(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, TrackingAllocator<T>>;

/// Dense row-major array. Plain value type; no gradient bookkeeping.
template <typename T>
struct Tensor {
  Shape shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), T(0)) {}
  Tensor(Shape s, Buffer<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) throw ShapeError("tensor data length does not match shape " + shape_str(shape));
  }
  Tensor(Shape s, const std::vector<T>& d) : Tensor(std::move(s), Buffer<T>(d.begin(), d.end())) {}

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  std::span<T> span() { return {data.data(), data.size()}; }
  std::span<const T> span() const { return {data.data(), data.size()}; }
};

/// Global switch consulted by every primitive: when disabled, results carry no
/// parents and intermediates are released as soon as they go out of scope.
class GradMode {
 public:
  static bool enabled();
  static void set(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

std::uint64_t next_sequence();

template <typename T>
struct Node {
  Tensor<T> value;
  Buffer<T> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grad buffers.
  std::function<void(Node&)> backward;
  std::string name;

  bool is_leaf() const { return !backward; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Handle to a node in the recorded computation. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> value) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->seq = next_sequence();
    return Var(std::move(n));
  }
  static Var constant(Shape shape, const std::vector<T>& data) { return constant(Tensor<T>(std::move(shape), data)); }
  static Var parameter(Tensor<T> value, std::string name = {}) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->seq = next_sequence();
    n->name = std::move(name);
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t dim(std::size_t i) const { return node_->value.shape.at(i); }
  std::size_t rank() const { return node_->value.shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  std::span<const T> data() const { return node_->value.span(); }
  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value.data[0];
  }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
  }
  void zero_grad() { node_->grad.clear(); }
  const std::string& name() const { return node_->name; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds a result node. Parents and the backward rule are dropped when grad
/// mode is off or no parent requires a gradient.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = next_sequence();
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any && GradMode::enabled()) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

/// Reverse-mode sweep from a scalar. Intermediate gradients are reset on every
/// call; leaf gradients accumulate across calls.
template <typename T>
void backward(const Var<T>& loss);

}  // namespace netmamba::ad
