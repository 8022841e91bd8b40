// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "oodcert/error.hpp"
#include "oodcert/tensor.hpp"

namespace oodcert {

/// Named parameter tensors; std::map keeps iteration lexicographic.
template<class T>
using ParamSet = std::map<std::string, Tensor<T>>;

namespace ad {

//---------------------------------------------------------------------------//
/*!
 * Node of the reverse-mode graph.
 *
 * Nodes that do not depend on any trainable leaf drop their parents and
 * backward closure at construction, so inference builds no graph.
 */
template<class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer()
    {
        if (!has_grad) {
            grad = Tensor<T>(value.shape());
            has_grad = true;
        }
        return grad;
    }
};

template<class T>
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    const Tensor<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const { return node_; }

  private:
    std::shared_ptr<Node<T>> node_;
};

template<class T>
using VarMap = std::map<std::string, Var<T>>;

template<class T>
Var<T> constant(Tensor<T> v)
{
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->op = "constant";
    return Var<T>(std::move(n));
}

template<class T>
Var<T> parameter(Tensor<T> v)
{
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->op = "parameter";
    return Var<T>(std::move(n));
}

namespace detail {

template<class T, class Backward>
Var<T> make(const char* op, Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
            Backward&& backward)
{
    if (!value.all_finite()) throw NumericError(std::string("numerical overflow in ") + op);
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::forward<Backward>(backward);
    }
    return Var<T>(std::move(n));
}

}  // namespace detail

/// Accumulate d(root)/d(node) into every trainable node reachable from root.
template<class T>
void backward(const Var<T>& root)
{
    if (root.value().size() != 1) throw ShapeError("backward requires a scalar root");
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node<T>* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] = T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && n->has_grad) n->backward(*n);
    }
}

/// Value of a scalar expression and its gradient with respect to every
/// tensor of \p at. \p f receives the parameters as graph leaves.
template<class T, class F>
std::pair<T, ParamSet<T>> value_and_grad(F&& f, const ParamSet<T>& at)
{
    VarMap<T> leaves;
    for (const auto& [name, value] : at) leaves.emplace(name, parameter(value));
    Var<T> out = f(static_cast<const VarMap<T>&>(leaves));
    if (out.value().size() != 1) throw ShapeError("value_and_grad: expression is not scalar");
    backward(out);
    ParamSet<T> grads;
    for (const auto& [name, leaf] : leaves) {
        Node<T>* n = leaf.node();
        Tensor<T> g = n->has_grad ? std::move(n->grad) : Tensor<T>(n->value.shape());
        if (!g.all_finite()) throw NumericError("numerical overflow in gradient of " + name);
        grads.emplace(name, std::move(g));
    }
    return {out.value().item(), std::move(grads)};
}

template<class T, class F>
ParamSet<T> grad(F&& f, const ParamSet<T>& at)
{
    return value_and_grad<T>(std::forward<F>(f), at).second;
}

}  // namespace ad
}  // namespace oodcert
