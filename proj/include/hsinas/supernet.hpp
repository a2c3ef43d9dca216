#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "hsinas/backbone.hpp"
#include "hsinas/search_space.hpp"
#include "hsinas/viterbi.hpp"

namespace hsinas {

struct SupernetConfig {
  int layers = 2;
  int nodes = 3;
  int base_width = 8;
  std::array<double, 3> gamma{1.0, 1.5, 2.0};
  SpaceId space = SpaceId::asym_d;
  int stem_channels = 32;
  int num_classes = 0;
  double leaky_slope = 0.01;
  int classifier_channels = 32;

  void validate() const {
    check(layers >= 1 && nodes >= 1, ErrKind::Config, "need at least one layer and one node");
    check(base_width >= 1, ErrKind::Config, "base width must be positive");
    check(gamma[0] < gamma[1] && gamma[1] < gamma[2], ErrKind::Config,
          "width factors must increase strictly");
    check(i64(gamma[0] * base_width) >= 1, ErrKind::Config, "smallest width rounds to zero");
    check(num_classes >= 1, ErrKind::Config, "need a positive class count");
  }

  i64 width_of(int i) const { return i64(gamma[size_t(i)] * double(base_width)); }
  // The first searching layer only offers the two narrow widths.
  int width_options(int layer) const { return layer == 0 ? 2 : 3; }
  int edges_per_cell() const {
    int e = 0;
    for (int i = 0; i < nodes; i++) e += i + 2;
    return e;
  }
};

// One (layer, width) supercell: every edge carries all 8 candidate ops; node
// output mixes them with softmaxed architecture weights (one row per edge).
template <class S>
class Supercell {
 public:
  Supercell(const SupernetConfig& cfg, i64 width, const std::string& prefix, Rng& rng)
      : nodes_(cfg.nodes), width_(width) {
    const auto& kinds = space_ops(cfg.space);
    int e = 0;
    for (int i = 0; i < nodes_; i++) {
      for (int j = 0; j < i + 2; j++, e++) {
        std::vector<OpInstance<S>> ops;
        ops.reserve(kinds.size());
        for (const OpKind& kind : kinds)
          ops.push_back(build_op<S>(kind, width, width, S(cfg.leaky_slope), rng));
        for (auto& op : ops)
          for (auto& p : op.params())
            p.name = prefix + ".edge" + std::to_string(e) + "." + p.name;
        edge_ops_.push_back(std::move(ops));
      }
    }
  }

  // in1/in2 must already be projected to this cell's width. alpha_sm is the
  // layer's softmaxed [edges, ops] weight tensor shared across widths.
  Tensor<S> forward(const Tensor<S>& in1, const Tensor<S>& in2, const Tensor<S>& alpha_sm,
                    bool train) {
    check(in1.shape()[1] == width_ && in2.shape()[1] == width_, ErrKind::Dimension,
          "cell expects projected inputs of width ", width_);
    invocations_++;
    std::vector<Tensor<S>> state{in1, in2};
    std::vector<Tensor<S>> node_outs;
    int e = 0;
    for (int i = 0; i < nodes_; i++) {
      Tensor<S> acc;
      for (size_t j = 0; j < state.size(); j++, e++) {
        std::vector<Tensor<S>> outs;
        std::vector<int> slots;
        outs.reserve(edge_ops_[size_t(e)].size());
        for (size_t k = 0; k < edge_ops_[size_t(e)].size(); k++) {
          outs.push_back(edge_ops_[size_t(e)][k].forward(state[j], train));
          slots.push_back(e * int(edge_ops_[size_t(e)].size()) + int(k));
        }
        Tensor<S> mixed = weighted_sum(outs, alpha_sm, slots);
        acc = acc.defined() ? add(acc, mixed) : mixed;
      }
      state.push_back(acc);
      node_outs.push_back(acc);
    }
    return concat_channels<S>(node_outs);
  }

  i64 width() const { return width_; }
  i64 invocations() const { return invocations_; }
  void reset_invocations() { invocations_ = 0; }
  int edge_count() const { return int(edge_ops_.size()); }
  OpInstance<S>& op(int edge, int k) { return edge_ops_[size_t(edge)][size_t(k)]; }

  void collect(std::vector<Parameter<S>*>& out) {
    for (auto& edge : edge_ops_)
      for (auto& op : edge)
        for (auto& p : op.params()) out.push_back(&p);
  }

  void collect_stats(std::vector<RunningStats<S>*>& out) {
    for (auto& edge : edge_ops_)
      for (auto& op : edge) out.push_back(&op.stats());
  }

 private:
  int nodes_;
  i64 width_;
  std::vector<std::vector<OpInstance<S>>> edge_ops_;  // [edge][op]
  i64 invocations_ = 0;
};

// The searchable network: stem, L layers of width-varied supercells with
// shared per-layer op weights alpha and path weights beta, classifier head.
template <class S>
class Supernet {
 public:
  Supernet(const SupernetConfig& cfg, i64 bands, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    check(bands >= 9, ErrKind::Config, "need at least 9 spectral bands, got ", bands,
          " (two stride-2 kernel-5 stem convolutions must fit)");
    Rng rng(derive_seed(seed, "supernet-init"));
    stem_ = Stem<S>(cfg_.stem_channels, S(cfg_.leaky_slope), rng, params_);

    const int E = cfg_.edges_per_cell();
    for (int l = 0; l < cfg_.layers; l++) {
      Tensor<S> a = Tensor<S>::alloc({E, 8});
      for (i64 i = 0; i < a.numel(); i++) a.data()[i] = S(rng.normal() * 1e-3);
      a.set_requires_grad(true);
      params_.push_back({"alpha.layer" + std::to_string(l), ParamRole::arch_alpha, a});
      alpha_.push_back(a);
    }
    for (int l = 0; l < cfg_.layers; l++) {
      std::vector<Tensor<S>> per_target;
      if (l > 0) {
        for (int i = 0; i < cfg_.width_options(l); i++) {
          const int n_in = int(incoming(l, i).size());
          Tensor<S> b = Tensor<S>::alloc({n_in});
          for (i64 t = 0; t < b.numel(); t++) b.data()[t] = S(rng.normal() * 1e-3);
          b.set_requires_grad(true);
          params_.push_back({"beta.layer" + std::to_string(l) + ".width" + std::to_string(i),
                             ParamRole::arch_beta, b});
          per_target.push_back(b);
        }
      }
      beta_.push_back(std::move(per_target));
    }

    for (int l = 0; l < cfg_.layers; l++) {
      std::vector<std::unique_ptr<Supercell<S>>> row;
      for (int i = 0; i < cfg_.width_options(l); i++)
        row.push_back(std::make_unique<Supercell<S>>(
            cfg_, cfg_.width_of(i), "layer" + std::to_string(l) + ".width" + std::to_string(i),
            rng));
      cells_.push_back(std::move(row));
    }

    // Input projections. proj1_[l][i][s]: source s of the beta mixture into
    // width i (layer 0 has the stem as its single source). proj2_[l][i]: the
    // skip input from two layers down (stem for the first two layers).
    for (int l = 0; l < cfg_.layers; l++) {
      std::vector<std::vector<Tensor<S>>> row1;
      std::vector<Tensor<S>> row2;
      for (int i = 0; i < cfg_.width_options(l); i++) {
        const i64 wi = cfg_.width_of(i);
        std::vector<Tensor<S>> projs;
        std::string base = "layer" + std::to_string(l) + ".width" + std::to_string(i);
        if (l == 0) {
          projs.push_back(make_weight(base + ".proj_in1.stem", {wi, cfg_.stem_channels, 1, 1, 1},
                                      cfg_.stem_channels, rng));
        } else {
          for (int k : incoming(l, i)) {
            const i64 src_ch = i64(cfg_.nodes) * cfg_.width_of(k);
            projs.push_back(make_weight(base + ".proj_in1.src" + std::to_string(k),
                                        {wi, src_ch, 1, 1, 1}, src_ch, rng));
          }
        }
        row1.push_back(std::move(projs));
        const i64 in2_ch = (l < 2) ? i64(cfg_.stem_channels)
                                   : i64(cfg_.nodes) * cfg_.width_of(skip_width(l, i));
        row2.push_back(make_weight(base + ".proj_in2", {wi, in2_ch, 1, 1, 1}, in2_ch, rng));
      }
      proj1_.push_back(std::move(row1));
      proj2_.push_back(std::move(row2));
    }

    const int last = cfg_.layers - 1;
    std::vector<i64> head_in;
    for (int i = 0; i < cfg_.width_options(last); i++)
      head_in.push_back(i64(cfg_.nodes) * cfg_.width_of(i));
    head_ = ClassifierHead<S>(head_in, cfg_.classifier_channels, cfg_.num_classes,
                              S(cfg_.leaky_slope), rng, params_);
  }

  const SupernetConfig& config() const { return cfg_; }

  // Legal beta sources feeding width i of layer l (widths of layer l-1 within
  // one step).
  std::vector<int> incoming(int l, int i) const {
    std::vector<int> ks;
    for (int k = 0; k < cfg_.width_options(l - 1); k++)
      if (std::abs(k - i) <= 1) ks.push_back(k);
    return ks;
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) { return run(x, train, false); }
  // Unshared reference: evaluates the target cell once per incoming path and
  // mixes the cell outputs instead of the cell inputs.
  Tensor<S> forward_reference_unshared(const Tensor<S>& x, bool train) {
    return run(x, train, true);
  }

  Tensor<S> stem(const Tensor<S>& x, bool train) { return stem_.forward(x, train); }
  Tensor<S> classify(const std::vector<Tensor<S>>& last) { return head_.forward(last); }

  Tensor<S>& projection_in1(int l, int i, int s) {
    return proj1_[size_t(l)][size_t(i)][size_t(s)];
  }
  Tensor<S>& projection_in2(int l, int i) { return proj2_[size_t(l)][size_t(i)]; }

  // Test instrumentation: keep value-only snapshots of every h_l^i from the
  // next forward passes.
  void set_record(bool on) { record_ = on; }
  const std::vector<std::vector<Tensor<S>>>& recorded_activations() const { return recorded_; }

  std::vector<Parameter<S>*> theta_params() { return collect(false); }
  std::vector<Parameter<S>*> arch_params() { return collect(true); }
  std::vector<Parameter<S>>& all_params() { return params_; }

  Tensor<S>& alpha(int layer) { return alpha_[size_t(layer)]; }
  Tensor<S>& beta(int layer, int target) { return beta_[size_t(layer)][size_t(target)]; }

  Supercell<S>& cell(int layer, int width) { return *cells_[size_t(layer)][size_t(width)]; }
  void reset_invocations() {
    for (auto& row : cells_)
      for (auto& c : row) c->reset_invocations();
  }

  Stem<S>& stem_block() { return stem_; }

  // Every batch-norm running-stats block, in a stable order, for state
  // save/restore alongside the parameters.
  std::vector<RunningStats<S>*> running_stats() {
    std::vector<RunningStats<S>*> out{&stem_.rs1, &stem_.rs2};
    for (auto& row : cells_)
      for (auto& c : row) c->collect_stats(out);
    return out;
  }

  // Width-state probabilities from beta. Each width state's score is the mean
  // exponentiated beta mass of its incoming transitions (mean, not sum, so
  // uniform beta yields a uniform trellis despite middle states having more
  // incoming edges), normalized across the layer's states. The first layer has
  // no beta and is uniform over its two widths.
  WidthTrellis beta_trellis() {
    WidthTrellis t;
    t.prob.push_back(std::vector<double>(size_t(cfg_.width_options(0)),
                                         1.0 / double(cfg_.width_options(0))));
    for (int l = 1; l < cfg_.layers; l++) {
      const int n = cfg_.width_options(l);
      double peak = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; i++)
        for (i64 s = 0; s < beta_[size_t(l)][size_t(i)].numel(); s++)
          peak = std::max(peak, double(beta_[size_t(l)][size_t(i)].data()[s]));
      std::vector<double> row(size_t(n), 0.0);
      double total = 0;
      for (int i = 0; i < n; i++) {
        const Tensor<S>& b = beta_[size_t(l)][size_t(i)];
        double mass = 0;
        for (i64 s = 0; s < b.numel(); s++) mass += std::exp(double(b.data()[s]) - peak);
        row[size_t(i)] = mass / double(b.numel());
        total += row[size_t(i)];
      }
      for (double& v : row) v /= total;
      t.prob.push_back(row);
    }
    return t;
  }

  std::vector<std::vector<std::vector<S>>> alpha_values() {
    std::vector<std::vector<std::vector<S>>> out;
    for (int l = 0; l < cfg_.layers; l++) {
      std::vector<std::vector<S>> rows;
      const Tensor<S>& a = alpha_[size_t(l)];
      for (i64 e = 0; e < a.shape()[0]; e++)
        rows.emplace_back(a.data() + e * 8, a.data() + (e + 1) * 8);
      out.push_back(std::move(rows));
    }
    return out;
  }

 private:
  Tensor<S> make_weight(const std::string& name, Shape shape, i64 fan_in, Rng& rng) {
    Tensor<S> t = Tensor<S>::alloc(shape);
    he_normal_fill(t, fan_in, S(cfg_.leaky_slope), rng);
    t.set_requires_grad(true);
    params_.push_back({name, ParamRole::weight, t});
    return t;
  }

  std::vector<Parameter<S>*> collect(bool arch) {
    std::vector<Parameter<S>*> out;
    for (auto& p : params_)
      if (is_arch_role(p.role) == arch) out.push_back(&p);
    for (auto& row : cells_)
      if (!arch)
        for (auto& c : row) c->collect(out);
    return out;
  }

  // Width available in layer l-2 nearest to width i (layer 0 offers one
  // option fewer).
  int skip_width(int l, int i) const {
    return std::min(i, cfg_.width_options(l - 2) - 1);
  }

  Tensor<S> run(const Tensor<S>& x, bool train, bool unshared) {
    Tensor<S> s = stem_.forward(x, train);
    std::vector<std::vector<Tensor<S>>> acts;  // acts[l][i]
    if (record_) recorded_.clear();

    for (int l = 0; l < cfg_.layers; l++) {
      Tensor<S> alpha_sm = softmax(alpha_[size_t(l)], 1);
      std::vector<Tensor<S>> outs;
      for (int i = 0; i < cfg_.width_options(l); i++) {
        Tensor<S> in2_src = (l < 2) ? s : acts[size_t(l - 2)][size_t(skip_width(l, i))];
        Tensor<S> in2 = conv3d(in2_src, proj2_[size_t(l)][size_t(i)], Stride3{}, Pad3{});
        if (l == 0) {
          Tensor<S> in1 = conv3d(s, proj1_[0][size_t(i)][0], Stride3{}, Pad3{});
          outs.push_back(cells_[0][size_t(i)]->forward(in1, in2, alpha_sm, train));
          continue;
        }
        const auto ks = incoming(l, i);
        Tensor<S> bsm = softmax(beta_[size_t(l)][size_t(i)], 0);
        std::vector<Tensor<S>> projected;
        for (size_t si = 0; si < ks.size(); si++)
          projected.push_back(conv3d(acts[size_t(l - 1)][size_t(ks[si])],
                                     proj1_[size_t(l)][size_t(i)][si], Stride3{}, Pad3{}));
        std::vector<int> slots(ks.size());
        for (size_t si = 0; si < ks.size(); si++) slots[si] = int(si);
        if (!unshared) {
          Tensor<S> mixed = weighted_sum(projected, bsm, slots);
          outs.push_back(cells_[size_t(l)][size_t(i)]->forward(mixed, in2, alpha_sm, train));
        } else {
          std::vector<Tensor<S>> cell_outs;
          for (auto& f : projected)
            cell_outs.push_back(cells_[size_t(l)][size_t(i)]->forward(f, in2, alpha_sm, train));
          outs.push_back(weighted_sum(cell_outs, bsm, slots));
        }
      }
      acts.push_back(std::move(outs));
      if (record_) {
        std::vector<Tensor<S>> row;
        for (const Tensor<S>& a : acts.back()) {
          Tensor<S> copy = Tensor<S>::alloc(a.shape());
          std::copy(a.data(), a.data() + a.numel(), copy.data());
          row.push_back(copy);
        }
        recorded_.push_back(std::move(row));
      }
    }
    return head_.forward(acts.back());
  }

  SupernetConfig cfg_;
  std::vector<Parameter<S>> params_;

  Stem<S> stem_;
  ClassifierHead<S> head_;

  std::vector<Tensor<S>> alpha_;                      // [L] each [E,8]
  std::vector<std::vector<Tensor<S>>> beta_;          // [L][target]
  std::vector<std::vector<std::unique_ptr<Supercell<S>>>> cells_;
  std::vector<std::vector<std::vector<Tensor<S>>>> proj1_;
  std::vector<std::vector<Tensor<S>>> proj2_;

  bool record_ = false;
  std::vector<std::vector<Tensor<S>>> recorded_;
};

}  // namespace hsinas
