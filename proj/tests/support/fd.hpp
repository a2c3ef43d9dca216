#pragma once

#include <functional>

#include "hsinas/tensor.hpp"

// Central finite-difference gradient oracle. The loss builder re-runs the full
// forward pass from the current parameter values, so perturbing a single data
// slot and re-evaluating yields the numeric partial derivative.

namespace hsinas::testsupport {

struct FdReport {
  double max_rel_err = 0;
  i64 checked = 0;
};

inline double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

// Checks d(loss)/d(t) against central differences on up to `samples` randomly
// chosen entries of t. `build` must construct the loss graph from scratch.
inline FdReport fd_check(Tensor<double>& t, const std::function<Tensor<double>()>& build, Rng& rng,
                         int samples = 8, double step = 1e-4) {
  t.zero_grad();
  Tensor<double> loss = build();
  backward(loss);
  std::vector<double> analytic = t.grad();
  t.zero_grad();

  auto eval = [&build]() {
    NoGradGuard ng;
    return build().item();
  };

  FdReport rep;
  i64 n = t.numel();
  for (int s = 0; s < samples && s < n; s++) {
    i64 idx = (n <= samples) ? s : rng.below(n);
    double* slot = t.data() + idx;
    double orig = *slot;
    *slot = orig + step;
    double lp = eval();
    *slot = orig - step;
    double lm = eval();
    *slot = orig;
    double numeric = (lp - lm) / (2 * step);
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[size_t(idx)], numeric));
    rep.checked++;
  }
  return rep;
}

inline void fill_uniform(Tensor<double>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (i64 i = 0; i < t.numel(); i++) t.data()[i] = rng.uniform(lo, hi);
}

// Keeps values away from the LeakyReLU kink so finite differences stay valid.
inline void fill_away_from_zero(Tensor<double>& t, Rng& rng, double margin = 0.05) {
  for (i64 i = 0; i < t.numel(); i++) {
    double v = rng.uniform(margin, 1.0);
    t.data()[i] = rng.uniform() < 0.5 ? v : -v;
  }
}

}  // namespace hsinas::testsupport
