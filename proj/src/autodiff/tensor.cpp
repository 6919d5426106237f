// SPDX-License-Identifier: Apache-2.0
#include "autodiff/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace netmamba::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

void throw_shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

namespace {
std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::uint64_t> g_seq{0};
thread_local bool g_grad_enabled = true;
}  // namespace

void MemoryTracker::add(std::size_t bytes) {
  auto now = g_live.fetch_add(bytes) + bytes;
  auto peak = g_peak.load();
  while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
  }
}
void MemoryTracker::sub(std::size_t bytes) { g_live.fetch_sub(bytes); }
std::size_t MemoryTracker::live() { return g_live.load(); }
std::size_t MemoryTracker::peak() { return g_peak.load(); }
void MemoryTracker::reset_peak() { g_peak.store(g_live.load()); }

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

std::uint64_t next_sequence() { return ++g_seq; }

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  Node<T>* root = loss.node();
  if (!root->requires_grad) return;

  // Reachable nodes, replayed in reverse creation order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  for (Node<T>* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  root->ensure_grad();
  root->grad[0] += T(1);
  for (Node<T>* n : order) {
    if (!n->is_leaf()) {
      n->backward(*n);
      // Intermediate gradients are not needed once propagated.
      if (n != root) Buffer<T>().swap(n->grad);
    }
  }
}

template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace netmamba::ad
