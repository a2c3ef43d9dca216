#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hsinas/common.hpp"

// Reverse-mode autodiff over dense row-major arrays. A Tensor is a handle to a
// graph node; ops build nodes whose backward closures push gradient into their
// parents through a GradSink. backward(loss) runs the graph once and adds the
// result into the .grad of every leaf that requires it (repeated calls keep
// accumulating until zero_grad). Intermediate gradients live only in transient
// staging buffers, freed as soon as their node has been processed. Dropping
// the last handle to the loss frees the whole graph.

namespace hsinas {

inline thread_local int nograd_depth = 0;

// Disables graph construction in scope; forwards under the guard are pure compute.
struct NoGradGuard {
  NoGradGuard() { nograd_depth++; }
  ~NoGradGuard() { nograd_depth--; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct TensorNode;

template <class S>
class GradSink {
public:
  // Staging buffer for a parent's incoming gradient, or nullptr if nothing
  // upstream of that parent requires grad.
  virtual S* slot(TensorNode<S>* node) = 0;
  virtual ~GradSink() = default;
};

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // persisted only on leaves with requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void(const S*, GradSink<S>&)> backward;
};

template <class S>
class Tensor {
public:
  Tensor() = default;

  static Tensor alloc(Shape shape) {
    Tensor t;
    t.n_ = std::make_shared<TensorNode<S>>();
    t.n_->shape = shape;
    t.n_->data.resize(size_t(shape.numel()));
    return t;
  }

  static Tensor zeros(Shape shape) { return alloc(shape); }

  static Tensor full(Shape shape, S v) {
    Tensor t = alloc(shape);
    std::fill(t.n_->data.begin(), t.n_->data.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    check(i64(values.size()) == shape.numel(), ErrKind::Dimension, "value count ", values.size(),
          " does not fill shape ", shape.str());
    Tensor t;
    t.n_ = std::make_shared<TensorNode<S>>();
    t.n_->shape = shape;
    t.n_->data = std::move(values);
    return t;
  }

  bool defined() const { return bool(n_); }
  const Shape& shape() const { return n_->shape; }
  i64 numel() const { return n_->shape.numel(); }
  S* data() { return n_->data.data(); }
  const S* data() const { return n_->data.data(); }
  S item() const {
    check(numel() == 1, ErrKind::Contract, "item() on non-scalar tensor ", shape().str());
    return n_->data[0];
  }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) {
    check(!v || !n_->backward, ErrKind::Contract, "requires_grad is set on leaves, not op results");
    n_->requires_grad = v;
  }

  // Leaf gradient accumulator (allocated zeroed on first access).
  std::vector<S>& grad() {
    if (n_->grad.empty()) n_->grad.assign(size_t(numel()), S(0));
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
  }

  TensorNode<S>* node() const { return n_.get(); }
  std::shared_ptr<TensorNode<S>> handle() const { return n_; }

  // Turns a freshly computed tensor into an op result. No-op under NoGradGuard
  // or when no parent requires grad, leaving a constant node (graph-free path).
  void attach(std::vector<Tensor> parents, std::function<void(const S*, GradSink<S>&)> fn) {
    if (nograd_depth > 0) return;
    bool any = false;
    for (const auto& p : parents) any = any || p.n_->requires_grad;
    if (!any) return;
    n_->requires_grad = true;
    n_->parents.reserve(parents.size());
    for (auto& p : parents) n_->parents.push_back(p.n_);
    n_->backward = std::move(fn);
  }

private:
  std::shared_ptr<TensorNode<S>> n_;
};

template <class S>
inline bool grad_needed(std::initializer_list<const Tensor<S>*> parents) {
  if (nograd_depth > 0) return false;
  for (const auto* p : parents)
    if (p->requires_grad()) return true;
  return false;
}

namespace autodetail {

template <class S>
struct StageSink : GradSink<S> {
  std::unordered_map<TensorNode<S>*, std::vector<S>> stage;

  S* slot(TensorNode<S>* node) override {
    if (!node->requires_grad) return nullptr;
    auto& buf = stage[node];
    if (buf.empty()) buf.assign(size_t(node->shape.numel()), S(0));
    return buf.data();
  }
};

template <class S>
void topo_order(TensorNode<S>* root, std::vector<TensorNode<S>*>& order) {
  std::unordered_set<TensorNode<S>*> seen;
  std::vector<std::pair<TensorNode<S>*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<S>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace autodetail

template <class S>
void backward(const Tensor<S>& loss) {
  check(loss.numel() == 1, ErrKind::Contract, "backward expects a scalar loss, got ",
        loss.shape().str());
  if (!loss.requires_grad()) return;

  std::vector<TensorNode<S>*> order;
  autodetail::topo_order(loss.node(), order);

  autodetail::StageSink<S> sink;
  sink.stage[loss.node()] = {S(1)};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode<S>* node = *it;
    auto found = sink.stage.find(node);
    if (found == sink.stage.end()) continue;
    std::vector<S> gout = std::move(found->second);
    sink.stage.erase(found);
    if (node->backward) {
      node->backward(gout.data(), sink);
    } else {
      if (node->grad.empty()) node->grad.assign(gout.size(), S(0));
      for (size_t i = 0; i < gout.size(); i++) node->grad[i] += gout[i];
    }
  }
}

// Which optimizer owns a trainable tensor: arch_* roles belong to the
// architecture optimizer, everything else to the network optimizer.
enum class ParamRole { weight, bias, bn_scale, bn_shift, arch_alpha, arch_beta };

inline bool is_arch_role(ParamRole r) {
  return r == ParamRole::arch_alpha || r == ParamRole::arch_beta;
}

template <class S>
struct Parameter {
  std::string name;
  ParamRole role = ParamRole::weight;
  Tensor<S> tensor;
};

}  // namespace hsinas
