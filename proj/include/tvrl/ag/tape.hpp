#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tvrl/core/error.hpp"
#include "tvrl/core/mat.hpp"

namespace tvrl::ag {

/// One learnable tensor. Owned by a model/head, referenced by tapes and the
/// optimizer. `trainable=false` freezes it: tapes treat it as a constant and
/// the optimizer skips it. `no_decay` exempts it from weight decay (biases,
/// norm parameters, tokens and positional embeddings).
template <class T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;  // same shape as value once touched, else empty
  bool trainable = true;
  bool no_decay = false;

  void zero_grad() {
    if (grad.size()) grad.setZero();
  }
  void ensure_grad() {
    if (!grad.size()) grad = Mat<T>::Zero(value.rows(), value.cols());
  }
  int64_t size() const { return value.size(); }
};

template <class T>
struct Node {
  Mat<T> value;
  Mat<T> grad;  // allocated lazily when a gradient first reaches this node
  bool requires_grad = false;
  bool keep = false;  // survive the post-backprop free (params, read leaves)
  std::function<void()> backprop;  // pulls this->grad into the parents
};

template <class T>
using Var = Node<T>*;

/// Accumulate `g` into the node's gradient buffer.
template <class T>
inline void accum(Var<T> n, const Mat<T>& g) {
  if (!n->requires_grad) return;
  if (!n->grad.size())
    n->grad = g;
  else
    n->grad += g;
}

template <class T>
inline void ensure_grad(Var<T> n) {
  if (!n->grad.size()) n->grad = Mat<T>::Zero(n->value.rows(), n->value.cols());
}

/// Dynamic computation tape. Nodes are recorded in creation order, which is a
/// topological order, so the backward pass is a single reverse sweep. One tape
/// is built per training step and dropped afterwards.
///
/// Memory discipline: after a node's backprop has run, its value and grad
/// buffers are freed unless `keep` is set. Consumers of a node were created
/// after it and therefore run their backprop earlier in the sweep, so this is
/// safe; it bounds the peak footprint of a step to roughly the forward
/// activations.
template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> alloc() {
    nodes_.push_back(std::make_unique<Node<T>>());
    return nodes_.back().get();
  }

  /// Constant input. Never receives gradients.
  Var<T> constant(Mat<T> value) {
    Var<T> n = alloc();
    n->value = std::move(value);
    return n;
  }

  /// Differentiable input whose gradient can be read back after backward().
  Var<T> input(Mat<T> value) {
    Var<T> n = alloc();
    n->value = std::move(value);
    n->requires_grad = grad_enabled_;
    n->keep = true;
    return n;
  }

  /// Wrap a parameter. The gradient lands in p.grad after backward().
  Var<T> param(Param<T>& p) {
    Var<T> n = alloc();
    n->value = p.value;  // copy; cheap relative to the GEMMs they feed
    n->requires_grad = grad_enabled_ && p.trainable;
    if (n->requires_grad) {
      Param<T>* pp = &p;
      n->backprop = [n, pp] {
        pp->ensure_grad();
        pp->grad += n->grad;
      };
    }
    return n;
  }

  /// Reverse sweep from a scalar (1x1) root.
  void backward(Var<T> root) {
    if (!grad_enabled_) throw contract_error("Tape::backward on a no-grad tape");
    if (root->value.size() != 1)
      throw contract_error("Tape::backward expects a scalar root");
    root->keep = true;  // callers read the loss value after backward
    ensure_grad(root);
    root->grad.setConstant(T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>* n = it->get();
      if (n->requires_grad && n->grad.size()) {
        if (n->backprop) n->backprop();
        if (!n->keep) {
          n->grad.resize(0, 0);
          n->value.resize(0, 0);
        }
      }
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node<T>>> nodes_;
  bool grad_enabled_;
};

}  // namespace tvrl::ag
