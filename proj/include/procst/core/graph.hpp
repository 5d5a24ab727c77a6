#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "procst/core/tensor.hpp"

namespace procst {

// Reverse-mode autodiff over Tensor<T>. Every backward rule is itself built
// from graph ops, so gradients are differentiable again (needed for the
// critic's gradient penalty, which differentiates a gradient norm).

template <typename T>
struct Node;

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  // Upstream grad (same shape as value) plus a per-parent "needed" mask;
  // entries for unneeded parents may be null.
  std::function<std::vector<Var<T>>(const Var<T>&, const std::vector<char>&)> backward;
  const char* op = "leaf";

  const std::vector<int>& shape() const { return value.shape(); }
};

template <typename T>
inline Var<T> make_leaf(Tensor<T> v, bool requires_grad = true) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
inline Var<T> make_const(Tensor<T> v) {
  return make_leaf<T>(std::move(v), false);
}

template <typename T>
inline Var<T> detach(const Var<T>& a) {
  return make_const<T>(a->value);
}

namespace detail {

// Post-order over the requires_grad subgraph reachable from root.
template <typename T>
inline void topo_order(const Var<T>& root, std::vector<Node<T>*>& order) {
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);  // defined in ops.hpp

/// Gradients of a scalar output w.r.t. each var in `wrt`. Vars with no path
/// to the output get a zero gradient of their own shape. The returned vars
/// stay connected to the graph, so they can be differentiated again.
template <typename T>
inline std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt) {
  if (output->value.numel() != 1) throw ShapeError("grad: output must be scalar");

  std::vector<Node<T>*> order;
  if (output->requires_grad) detail::topo_order(output, order);

  // A node is active if some wrt target is reachable from it via parents.
  std::unordered_set<Node<T>*> targets;
  for (const auto& w : wrt) targets.insert(w.get());
  std::unordered_set<Node<T>*> active;
  for (Node<T>* n : order) {  // post-order: parents come first
    if (targets.count(n)) {
      active.insert(n);
      continue;
    }
    for (const auto& p : n->parents)
      if (active.count(p.get())) {
        active.insert(n);
        break;
      }
  }

  std::unordered_map<Node<T>*, Var<T>> acc;
  if (active.count(output.get())) acc[output.get()] = make_const<T>(Tensor<T>::scalar(T(1)));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    auto gi = acc.find(n);
    if (gi == acc.end() || !n->backward) continue;
    std::vector<char> need(n->parents.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      Node<T>* p = n->parents[i].get();
      if (p->requires_grad && active.count(p)) {
        need[i] = 1;
        any = true;
      }
    }
    if (!any) continue;
    std::vector<Var<T>> pgrads = n->backward(gi->second, need);
    for (std::size_t i = 0; i < n->parents.size(); ++i) {
      if (!need[i] || !pgrads[i]) continue;
      Node<T>* p = n->parents[i].get();
      auto ai = acc.find(p);
      if (ai == acc.end())
        acc[p] = pgrads[i];
      else
        ai->second = add<T>(ai->second, pgrads[i]);
    }
  }

  std::vector<Var<T>> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto ai = acc.find(w.get());
    if (ai != acc.end())
      out.push_back(ai->second);
    else
      out.push_back(make_const<T>(Tensor<T>(w->value.shape(), T(0))));
  }
  return out;
}

}  // namespace procst
