#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hsinas/data.hpp"
#include "hsinas/metrics.hpp"
#include "hsinas/optim.hpp"
#include "hsinas/supernet.hpp"

// Bilevel architecture search: warm-up epochs train network weights only,
// after which every iteration takes one weight step on a train_theta batch
// followed by one architecture step on a train_arch batch. The supernet is
// evaluated on the validation windows after each epoch and the best-scoring
// full parameter state is retained.

namespace hsinas {

struct SearchConfig {
  i64 epochs_max = 100;
  i64 warmup_epochs = 20;
  i64 batch_size = 4;
  i64 pool_theta = 200;
  i64 pool_arch = 200;
  i64 patch_size = 32;
  double theta_momentum = 0.9;
  double theta_weight_decay = 3e-4;
  double lr_max = 0.025;
  double lr_min = 0.001;
  double arch_lr = 1e-3;
  double arch_weight_decay = 1e-3;
  uint64_t seed = 0;

  void validate() const {
    check(epochs_max >= 1, ErrKind::Config, "epochs_max must be positive");
    check(warmup_epochs >= 0 && warmup_epochs < epochs_max, ErrKind::Config,
          "warmup_epochs must lie in [0, epochs_max)");
    check(batch_size >= 1, ErrKind::Config, "batch_size must be positive");
    check(pool_theta >= 1 && pool_arch >= 1, ErrKind::Config, "pool sizes must be positive");
    check(patch_size >= 1, ErrKind::Config, "patch_size must be positive");
  }
};

struct SamplePool {
  std::vector<Sample> train_theta;
  std::vector<Sample> train_arch;
  std::vector<Sample> val;
};

// One random patch-sized crop whose label window is not empty; gives up with
// an error after a long run of label-free draws.
Sample random_labeled_crop(const HsiCube& cube, const LabelMap& labels, i64 patch, Rng& rng);

// Non-overlapping patch windows on the stride grid (last anchor clamped
// inward), keeping only windows that contain a labeled pixel.
std::vector<Sample> sliding_windows(const HsiCube& cube, const LabelMap& labels, i64 patch);

// Random patch crops for the two training pools (rejecting label-free crops)
// and non-overlapping sliding windows for validation.
SamplePool build_pool(const HsiCube& cube, const LabelMap& train_labels, const LabelMap& val_labels,
                      const SearchConfig& cfg);

struct EpochRecord {
  i64 epoch = 0;
  double train_loss = 0;
  double val_oa = 0, val_aa = 0, val_kappa = 0;
  double lr = 0;

  bool operator==(const EpochRecord&) const = default;
};

std::string history_line(const EpochRecord& r);

template <class S>
struct SearchResult {
  ParamSnapshot<S> best_state;  // every parameter, architecture and weights
  NormState<S> best_norm;       // batch-norm running statistics at that epoch
  i64 best_epoch = 0;
  double best_oa = 0;
  std::vector<EpochRecord> history;
};

namespace searchdetail {

// Sample list -> input tensor [B,1,bands,h,w] plus matching label patch.
template <class S>
std::pair<Tensor<S>, LabelPatch> assemble_batch(const std::vector<Sample>& pool,
                                                const std::vector<i64>& order, i64 first,
                                                i64 count) {
  const Sample& head = pool[size_t(order[size_t(first)])];
  Tensor<S> x = Tensor<S>::alloc({count, 1, head.bands, head.h, head.w});
  LabelPatch y(count, head.h, head.w);
  const i64 voxels = head.bands * head.h * head.w;
  const i64 pixels = head.h * head.w;
  for (i64 b = 0; b < count; b++) {
    const Sample& s = pool[size_t(order[size_t(first + b)])];
    check(s.bands == head.bands && s.h == head.h && s.w == head.w, ErrKind::Dimension,
          "mixed sample shapes in one batch");
    for (i64 i = 0; i < voxels; i++) x.data()[b * voxels + i] = S(s.x[size_t(i)]);
    for (i64 i = 0; i < pixels; i++) y.v[size_t(b * pixels + i)] = int32_t(s.y[size_t(i)]);
  }
  return {std::move(x), y};
}

// Per-pixel argmax over class logits; ties resolve to the smaller class id.
template <class S>
void predict_into(const Tensor<S>& logits, i64 batch_index, ClassMap& out) {
  const Shape& sh = logits.shape();
  const i64 k = sh[1], pixels = sh[2] * sh[3];
  const S* base = logits.data() + batch_index * k * pixels;
  for (i64 p = 0; p < pixels; p++) {
    int best = 0;
    S best_v = base[p];
    for (int c = 1; c < int(k); c++) {
      S v = base[c * pixels + p];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out.labels[size_t(p)] = uint16_t(best + 1);
  }
}

template <class S, class Net>
ConfusionMatrix evaluate_windows(Net& net, const std::vector<Sample>& val, i64 batch_size,
                                 int classes) {
  NoGradGuard ng;
  ConfusionMatrix cm(classes);
  std::vector<i64> order(val.size());
  for (size_t i = 0; i < order.size(); i++) order[i] = i64(i);
  for (i64 first = 0; first < i64(val.size()); first += batch_size) {
    const i64 count = std::min<i64>(batch_size, i64(val.size()) - first);
    auto [x, y] = assemble_batch<S>(val, order, first, count);
    Tensor<S> logits = net.forward(x, false);
    for (i64 b = 0; b < count; b++) {
      const Sample& s = val[size_t(first + b)];
      LabelMap ref{s.h, s.w, std::vector<uint16_t>(s.y.begin(), s.y.end())};
      ClassMap pred{s.h, s.w, std::vector<uint16_t>(size_t(s.h * s.w), 0)};
      predict_into(logits, b, pred);
      accumulate(cm, ref, pred);
    }
  }
  return cm;
}

}  // namespace searchdetail

// Called after every epoch's validation pass, e.g. for progress reporting.
using EpochCallback = std::function<void(const EpochRecord&)>;

template <class S>
SearchResult<S> run_search(Supernet<S>& net, const SamplePool& pool, const SearchConfig& cfg,
                           const EpochCallback& on_epoch = {}) {
  cfg.validate();
  check(!pool.train_theta.empty() && !pool.train_arch.empty() && !pool.val.empty(),
        ErrKind::Config, "search pool has an empty bucket");

  Rng rng(derive_seed(cfg.seed, "search-batches"));
  std::vector<Parameter<S>*> theta = net.theta_params();
  std::vector<Parameter<S>*> arch = net.arch_params();
  Sgd<S> theta_opt(theta, cfg.theta_momentum, cfg.theta_weight_decay);
  Adam<S> arch_opt(arch, cfg.arch_lr, cfg.arch_weight_decay);

  std::vector<i64> theta_order(pool.train_theta.size());
  std::vector<i64> arch_order(pool.train_arch.size());
  for (size_t i = 0; i < theta_order.size(); i++) theta_order[i] = i64(i);
  for (size_t i = 0; i < arch_order.size(); i++) arch_order[i] = i64(i);
  i64 arch_cursor = 0;

  auto next_arch_batch = [&]() {
    if (arch_cursor + cfg.batch_size > i64(arch_order.size())) {
      rng.shuffle(arch_order);
      arch_cursor = 0;
    }
    i64 first = arch_cursor;
    arch_cursor += std::min<i64>(cfg.batch_size, i64(arch_order.size()) - first);
    return std::pair<i64, i64>{first, arch_cursor - first};
  };
  rng.shuffle(arch_order);

  SearchResult<S> result;
  const int classes = net.config().num_classes;

  for (i64 epoch = 1; epoch <= cfg.epochs_max; epoch++) {
    const double lr = cosine_lr(epoch - 1, cfg.lr_max, cfg.lr_min, cfg.epochs_max);
    const bool warm = epoch <= cfg.warmup_epochs;
    rng.shuffle(theta_order);

    double loss_sum = 0;
    i64 loss_batches = 0;
    for (i64 first = 0; first < i64(theta_order.size()); first += cfg.batch_size) {
      const i64 count = std::min<i64>(cfg.batch_size, i64(theta_order.size()) - first);
      auto [x, y] = searchdetail::assemble_batch<S>(pool.train_theta, theta_order, first, count);
      zero_grads(theta);
      zero_grads(arch);
      Tensor<S> loss = masked_cross_entropy(net.forward(x, true), y);
      const double lv = double(loss.item());
      check(std::isfinite(lv), ErrKind::Diverged, "non-finite training loss at epoch ", epoch,
            ", batch ", loss_batches, " (weight step)");
      backward(loss);
      theta_opt.step(lr);
      loss_sum += lv;
      loss_batches++;

      if (!warm) {
        auto [afirst, acount] = next_arch_batch();
        auto [ax, ay] = searchdetail::assemble_batch<S>(pool.train_arch, arch_order, afirst, acount);
        zero_grads(theta);
        zero_grads(arch);
        Tensor<S> aloss = masked_cross_entropy(net.forward(ax, true), ay);
        const double av = double(aloss.item());
        check(std::isfinite(av), ErrKind::Diverged, "non-finite training loss at epoch ", epoch,
              ", batch ", loss_batches, " (architecture step)");
        backward(aloss);
        arch_opt.step();
      }
    }

    ConfusionMatrix cm = searchdetail::evaluate_windows<S>(net, pool.val, cfg.batch_size, classes);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / double(std::max<i64>(1, loss_batches));
    rec.val_oa = oa(cm);
    rec.val_aa = aa(cm);
    rec.val_kappa = kappa(cm);
    rec.lr = lr;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (result.best_state.empty() || rec.val_oa > result.best_oa) {
      result.best_oa = rec.val_oa;
      result.best_epoch = epoch;
      std::vector<Parameter<S>*> everything = theta;
      everything.insert(everything.end(), arch.begin(), arch.end());
      result.best_state = take_snapshot(everything);
      result.best_norm = take_norm_state(net.running_stats());
    }
  }
  return result;
}

// Applies a retained search state back onto a supernet (theta followed by
// architecture parameters, the order run_search snapshots them in).
template <class S>
void restore_search_state(Supernet<S>& net, const ParamSnapshot<S>& snap,
                          const NormState<S>& norm) {
  std::vector<Parameter<S>*> everything = net.theta_params();
  std::vector<Parameter<S>*> arch = net.arch_params();
  everything.insert(everything.end(), arch.begin(), arch.end());
  restore_snapshot(everything, snap);
  restore_norm_state(net.running_stats(), norm);
}

}  // namespace hsinas
