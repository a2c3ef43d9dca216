#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hsinas/compact.hpp"
#include "hsinas/search.hpp"

// Final-network training: every iteration draws a fresh batch of random
// labeled crops from the whole training map, augments each one (flips and
// right-angle rotations applied jointly to values and labels), and takes one
// SGD step under a poly learning-rate schedule. Validation runs on fixed
// sliding windows every eval_every iterations; the best-scoring state is
// retained and training stops when it has not improved for `patience`
// consecutive evaluations.

namespace hsinas {

struct FinalTrainConfig {
  i64 batch_size = 12;
  double lr_init = 0.1;
  double poly_power = 0.9;
  i64 max_iters = 5000;
  i64 eval_every = 100;
  i64 patience = 20;
  i64 patch_size = 32;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  uint64_t seed = 0;

  void validate() const {
    check(batch_size >= 1, ErrKind::Config, "batch_size must be positive");
    check(eval_every >= 1, ErrKind::Config, "eval_every must be positive");
    check(patience >= 1, ErrKind::Config, "patience must be positive");
    check(max_iters >= eval_every, ErrKind::Config,
          "max_iters must cover at least one evaluation interval");
    check(patch_size >= 1, ErrKind::Config, "patch_size must be positive");
    check(lr_init > 0, ErrKind::Config, "lr_init must be positive");
  }
};

// Flips and quarter-turn rotation applied to values and labels together.
// Rotation of a non-square sample is a contract violation.
Sample transform_sample(const Sample& s, bool hflip, bool vflip, int quarter_turns);

// Uniformly random member of the dihedral transform set.
Sample random_augment(const Sample& s, Rng& rng);

struct TrainRecord {
  i64 iter = 0;
  double train_loss = 0;
  double val_oa = 0, val_aa = 0, val_kappa = 0;
  double lr = 0;

  bool operator==(const TrainRecord&) const = default;
};

std::string train_line(const TrainRecord& r);

template <class S>
struct TrainResult {
  ParamSnapshot<S> best_state;
  NormState<S> best_norm;
  i64 best_iter = 0;
  double best_oa = 0;
  i64 iters_run = 0;
  std::vector<TrainRecord> history;
};

using TrainCallback = std::function<void(const TrainRecord&)>;

template <class S>
void restore_train_state(CompactNet<S>& net, const ParamSnapshot<S>& snap,
                         const NormState<S>& norm) {
  restore_snapshot(net.params(), snap);
  restore_norm_state(net.running_stats(), norm);
}

template <class S>
TrainResult<S> train_final(CompactNet<S>& net, const HsiCube& cube, const LabelMap& train_labels,
                           const LabelMap& val_labels, const FinalTrainConfig& cfg,
                           const TrainCallback& on_eval = {}) {
  cfg.validate();
  check(train_labels.labeled_count() > 0, ErrKind::EmptySupervision,
        "training label map is empty");

  const std::vector<Sample> val = sliding_windows(cube, val_labels, cfg.patch_size);
  check(!val.empty(), ErrKind::EmptySupervision, "no validation window contains a labeled pixel");

  Rng rng(derive_seed(cfg.seed, "final-train"));
  std::vector<Parameter<S>*> params = net.params();
  Sgd<S> opt(params, cfg.momentum, cfg.weight_decay);
  const int classes = net.classes();

  TrainResult<S> result;
  double loss_sum = 0;
  i64 loss_count = 0;
  i64 stale_evals = 0;

  std::vector<i64> order(size_t(cfg.batch_size));
  for (size_t i = 0; i < order.size(); i++) order[i] = i64(i);

  for (i64 iter = 0; iter < cfg.max_iters; iter++) {
    std::vector<Sample> batch;
    batch.reserve(size_t(cfg.batch_size));
    for (i64 b = 0; b < cfg.batch_size; b++)
      batch.push_back(
          random_augment(random_labeled_crop(cube, train_labels, cfg.patch_size, rng), rng));

    const double lr = poly_lr(iter, cfg.lr_init, cfg.max_iters, cfg.poly_power);
    auto [x, y] = searchdetail::assemble_batch<S>(batch, order, 0, cfg.batch_size);
    zero_grads(params);
    Tensor<S> loss = masked_cross_entropy(net.forward(x, true), y);
    const double lv = double(loss.item());
    check(std::isfinite(lv), ErrKind::Diverged, "non-finite training loss at iteration ",
          iter + 1);
    backward(loss);
    opt.step(lr);
    loss_sum += lv;
    loss_count++;
    result.iters_run = iter + 1;

    if ((iter + 1) % cfg.eval_every != 0) continue;

    ConfusionMatrix cm = searchdetail::evaluate_windows<S>(net, val, cfg.batch_size, classes);
    TrainRecord rec;
    rec.iter = iter + 1;
    rec.train_loss = loss_sum / double(loss_count);
    rec.val_oa = oa(cm);
    rec.val_aa = aa(cm);
    rec.val_kappa = kappa(cm);
    rec.lr = lr;
    result.history.push_back(rec);
    if (on_eval) on_eval(rec);
    loss_sum = 0;
    loss_count = 0;

    if (result.best_state.empty() || rec.val_oa > result.best_oa) {
      result.best_oa = rec.val_oa;
      result.best_iter = rec.iter;
      result.best_state = take_snapshot(params);
      result.best_norm = take_norm_state(net.running_stats());
      stale_evals = 0;
    } else if (++stale_evals >= cfg.patience) {
      break;
    }
  }
  return result;
}

}  // namespace hsinas
