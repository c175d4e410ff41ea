// Copyright (c) 2026 The misp authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "misp/tensor.hpp"

namespace misp::nn {

// Reverse-mode tape node. The graph is built eagerly by the ops in nn.hpp;
// backward() walks it once in reverse topological order. When no input of an
// op requires gradients the op returns an unlinked constant, so inference
// frees intermediates as soon as they go out of scope.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor<T>& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor<T>(value.shape);
      grad_ready = true;
    }
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var constant(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(t);
    return Var(std::move(n));
  }

  static Var param(Tensor<T> t) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(t);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& val() const { return node_->value; }
  // A Var is a handle; the node it points at stays mutable through const
  // handles, like a shared_ptr.
  Tensor<T>& mutable_val() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor<T>& grad() const { return node_->ensure_grad(); }
  bool has_grad() const { return node_ && node_->grad_ready; }
  void clear_grad() const {
    if (node_) {
      node_->grad_ready = false;
      node_->grad = Tensor<T>();
    }
  }
  std::shared_ptr<Node<T>> node() const { return node_; }

  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds an op node. Parents that don't require gradients are not linked;
// if none do, the result is a plain constant and `bwd` is discarded.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> bwd) {
  bool any = false;
  for (const auto& v : inputs) any = any || v.requires_grad();
  if (!any) return Var<T>::constant(std::move(value));
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  for (const auto& v : inputs) n->parents.push_back(v.node());
  n->backprop = std::move(bwd);
  return Var<T>(std::move(n));
}

// Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1.
template <typename T>
void backward(const Var<T>& root) {
  check<DimensionError>(root.shape().numel() == 1,
                        "backward: root must be a scalar, got ",
                        root.shape().str());
  if (!root.requires_grad()) return;

  // Iterative post-order topological sort.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  struct Frame {
    Node<T>* node;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node<T>* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad().data[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backprop && n->grad_ready) n->backprop(*n);
  }
}

}  // namespace misp::nn
