#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hsinas/ops.hpp"
#include "hsinas/tensor.hpp"

// Plain SGD-with-momentum and Adam over flat parameter lists, plus the two
// learning-rate schedules used by the search and final-training loops. Both
// optimizers treat weight decay as an additive L2 term folded into the
// gradient before the update.

namespace hsinas {

inline constexpr double kPi = 3.14159265358979323846;

inline double cosine_lr(i64 epoch, double lr_max, double lr_min, i64 epochs_max) {
  check(epochs_max >= 1, ErrKind::Config, "cosine schedule needs epochs_max >= 1");
  check(epoch >= 0, ErrKind::Contract, "negative epoch in cosine schedule");
  const double t = double(std::min(epoch, epochs_max)) / double(epochs_max);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(kPi * t));
}

inline double poly_lr(i64 iter, double lr_init, i64 max_iter, double power) {
  check(max_iter >= 1, ErrKind::Config, "poly schedule needs max_iter >= 1");
  check(iter >= 0, ErrKind::Contract, "negative iteration in poly schedule");
  const double frac = 1.0 - double(std::min(iter, max_iter)) / double(max_iter);
  return lr_init * std::pow(frac, power);
}

template <class S>
void zero_grads(const std::vector<Parameter<S>*>& params) {
  for (auto* p : params) p->tensor.zero_grad();
}

// Value-only copy of a parameter list, for best-so-far retention and
// checkpointing. Restoring requires the same parameters in the same order.
template <class S>
struct ParamSnapshot {
  std::vector<std::pair<std::string, std::vector<S>>> values;

  bool empty() const { return values.empty(); }
};

// Batch-norm running statistics captured alongside parameters; without them a
// restored network evaluates differently than the one that was saved.
template <class S>
struct NormState {
  std::vector<std::vector<S>> values;  // mean and var of each stats block, in order

  bool empty() const { return values.empty(); }
};

template <class S>
NormState<S> take_norm_state(const std::vector<RunningStats<S>*>& stats) {
  NormState<S> ns;
  ns.values.reserve(stats.size() * 2);
  for (auto* rs : stats) {
    ns.values.push_back(rs->mean);
    ns.values.push_back(rs->var);
  }
  return ns;
}

template <class S>
void restore_norm_state(const std::vector<RunningStats<S>*>& stats, const NormState<S>& ns) {
  check(ns.values.size() == stats.size() * 2, ErrKind::Contract, "norm state holds ",
        ns.values.size() / 2, " stat blocks, network has ", stats.size());
  for (size_t i = 0; i < stats.size(); i++) {
    check(ns.values[2 * i].size() == stats[i]->mean.size(), ErrKind::Contract,
          "norm state block ", i, " size mismatch");
    stats[i]->mean = ns.values[2 * i];
    stats[i]->var = ns.values[2 * i + 1];
  }
}

template <class S>
ParamSnapshot<S> take_snapshot(const std::vector<Parameter<S>*>& params) {
  ParamSnapshot<S> snap;
  snap.values.reserve(params.size());
  for (auto* p : params) {
    const S* d = p->tensor.data();
    snap.values.emplace_back(p->name, std::vector<S>(d, d + p->tensor.numel()));
  }
  return snap;
}

template <class S>
void restore_snapshot(const std::vector<Parameter<S>*>& params, const ParamSnapshot<S>& snap) {
  check(params.size() == snap.values.size(), ErrKind::Contract,
        "snapshot holds ", snap.values.size(), " tensors, network has ", params.size());
  for (size_t i = 0; i < params.size(); i++) {
    const auto& [name, vals] = snap.values[i];
    check(name == params[i]->name, ErrKind::Contract, "snapshot entry '", name,
          "' does not match parameter '", params[i]->name, "'");
    check(i64(vals.size()) == params[i]->tensor.numel(), ErrKind::Contract,
          "snapshot size mismatch on '", name, "'");
    std::copy(vals.begin(), vals.end(), params[i]->tensor.data());
  }
}

template <class S>
class Sgd {
 public:
  Sgd(std::vector<Parameter<S>*> params, double momentum, double weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    velocity_.reserve(params_.size());
    for (auto* p : params_) velocity_.emplace_back(size_t(p->tensor.numel()), S(0));
  }

  void step(double lr) {
    for (size_t i = 0; i < params_.size(); i++) {
      Tensor<S>& t = params_[i]->tensor;
      S* w = t.data();
      const std::vector<S>& g = t.grad();
      std::vector<S>& v = velocity_[i];
      for (size_t j = 0; j < v.size(); j++) {
        S grad = g[j] + S(weight_decay_) * w[j];
        v[j] = S(momentum_) * v[j] + grad;
        w[j] -= S(lr) * v[j];
      }
    }
  }

  const std::vector<Parameter<S>*>& params() const { return params_; }

 private:
  std::vector<Parameter<S>*> params_;
  double momentum_, weight_decay_;
  std::vector<std::vector<S>> velocity_;
};

template <class S>
class Adam {
 public:
  Adam(std::vector<Parameter<S>*> params, double lr, double weight_decay, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        lr_(lr),
        weight_decay_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
      m_.emplace_back(size_t(p->tensor.numel()), S(0));
      v_.emplace_back(size_t(p->tensor.numel()), S(0));
    }
  }

  void step() {
    t_++;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (size_t i = 0; i < params_.size(); i++) {
      Tensor<S>& t = params_[i]->tensor;
      S* w = t.data();
      const std::vector<S>& g = t.grad();
      for (size_t j = 0; j < m_[i].size(); j++) {
        double grad = double(g[j]) + weight_decay_ * double(w[j]);
        double m = beta1_ * double(m_[i][j]) + (1.0 - beta1_) * grad;
        double v = beta2_ * double(v_[i][j]) + (1.0 - beta2_) * grad * grad;
        m_[i][j] = S(m);
        v_[i][j] = S(v);
        w[j] -= S(lr_ * (m / c1) / (std::sqrt(v / c2) + eps_));
      }
    }
  }

  const std::vector<Parameter<S>*>& params() const { return params_; }
  i64 steps_taken() const { return t_; }

 private:
  std::vector<Parameter<S>*> params_;
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  std::vector<std::vector<S>> m_, v_;
  i64 t_ = 0;
};

}  // namespace hsinas
