#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hsinas/backbone.hpp"
#include "hsinas/genotype.hpp"

namespace hsinas {

// One decoded cell: each node sums exactly two retained ops over its inputs.
template <class S>
class CompactCell {
 public:
  CompactCell(const Genotype& g, int layer, i64 width, S slope, Rng& rng) : width_(width) {
    const auto& layer_cells = g.cells[size_t(layer)];
    for (size_t i = 0; i < layer_cells.size(); i++) {
      for (const GenotypeEdge& e : layer_cells[i]) {
        sources_.push_back(e.source);
        ops_.push_back(std::make_unique<OpInstance<S>>(op_by_name(g.space, e.op), width, width,
                                                       slope, rng));
        for (auto& p : ops_.back()->params())
          p.name = "layer" + std::to_string(layer) + ".node" + std::to_string(i) + "." + p.name;
      }
    }
  }

  Tensor<S> forward(const Tensor<S>& in1, const Tensor<S>& in2, bool train) {
    check(in1.shape()[1] == width_ && in2.shape()[1] == width_, ErrKind::Dimension,
          "cell expects projected inputs of width ", width_);
    std::vector<Tensor<S>> state{in1, in2};
    std::vector<Tensor<S>> node_outs;
    const size_t nodes = ops_.size() / 2;
    for (size_t i = 0; i < nodes; i++) {
      Tensor<S> a = ops_[2 * i]->forward(state[size_t(sources_[2 * i])], train);
      Tensor<S> b = ops_[2 * i + 1]->forward(state[size_t(sources_[2 * i + 1])], train);
      Tensor<S> node = add(a, b);
      state.push_back(node);
      node_outs.push_back(node);
    }
    return concat_channels<S>(node_outs);
  }

  i64 width() const { return width_; }

  void collect(std::vector<Parameter<S>*>& out) {
    for (auto& op : ops_)
      for (auto& p : op->params()) out.push_back(&p);
  }

  void collect_stats(std::vector<RunningStats<S>*>& out) {
    for (auto& op : ops_) out.push_back(&op->stats());
  }

 private:
  i64 width_;
  std::vector<int> sources_;
  std::vector<std::unique_ptr<OpInstance<S>>> ops_;
};

// The final network: stem, one fixed-width cell per layer with the retained
// edges only, classifier over the single last-layer stream.
template <class S>
class CompactNet {
 public:
  CompactNet(const Genotype& g, int num_classes, i64 bands, uint64_t seed, S slope = S(0.01))
      : g_(g), classes_(num_classes), slope_(slope) {
    g_.validate();
    check(num_classes >= 1, ErrKind::Config, "need a positive class count");
    check(bands >= 9, ErrKind::Config, "need at least 9 spectral bands, got ", bands,
          " (two stride-2 kernel-5 stem convolutions must fit)");
    Rng rng(derive_seed(seed, "compact-init"));

    stem_ = Stem<S>(kStemChannels, slope, rng, params_);

    for (int l = 0; l < g_.layers; l++) {
      const i64 w = g_.cell_width(l);
      cells_.push_back(std::make_unique<CompactCell<S>>(g_, l, w, slope, rng));
      const i64 in1_ch = (l == 0) ? kStemChannels : i64(g_.nodes) * g_.cell_width(l - 1);
      const i64 in2_ch = (l < 2) ? kStemChannels : i64(g_.nodes) * g_.cell_width(l - 2);
      proj1_.push_back(make_weight("layer" + std::to_string(l) + ".proj_in1",
                                   {w, in1_ch, 1, 1, 1}, in1_ch, rng));
      proj2_.push_back(make_weight("layer" + std::to_string(l) + ".proj_in2",
                                   {w, in2_ch, 1, 1, 1}, in2_ch, rng));
    }

    head_ = ClassifierHead<S>({i64(g_.nodes) * g_.cell_width(g_.layers - 1)}, kHeadChannels,
                              num_classes, slope, rng, params_);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    Tensor<S> s = stem_.forward(x, train);
    std::vector<Tensor<S>> acts;
    for (int l = 0; l < g_.layers; l++) {
      const Tensor<S>& in1_src = (l == 0) ? s : acts[size_t(l - 1)];
      const Tensor<S>& in2_src = (l < 2) ? s : acts[size_t(l - 2)];
      Tensor<S> in1 = conv3d(in1_src, proj1_[size_t(l)], Stride3{}, Pad3{});
      Tensor<S> in2 = conv3d(in2_src, proj2_[size_t(l)], Stride3{}, Pad3{});
      acts.push_back(cells_[size_t(l)]->forward(in1, in2, train));
    }
    return head_.forward({acts.back()});
  }

  const Genotype& genotype() const { return g_; }
  int classes() const { return classes_; }
  Stem<S>& stem_block() { return stem_; }
  CompactCell<S>& cell(int layer) { return *cells_[size_t(layer)]; }

  std::vector<Parameter<S>*> params() {
    std::vector<Parameter<S>*> out;
    for (auto& p : params_) out.push_back(&p);
    for (auto& c : cells_) c->collect(out);
    return out;
  }

  std::vector<RunningStats<S>*> running_stats() {
    std::vector<RunningStats<S>*> out{&stem_.rs1, &stem_.rs2};
    for (auto& c : cells_) c->collect_stats(out);
    return out;
  }

  i64 weight_count() {
    i64 n = 0;
    for (auto* p : params())
      if (p->role == ParamRole::weight) n += p->tensor.numel();
    return n;
  }

  static constexpr i64 kStemChannels = 32;
  static constexpr i64 kHeadChannels = 32;

 private:
  Tensor<S> make_weight(const std::string& name, Shape shape, i64 fan_in, Rng& rng) {
    Tensor<S> t = Tensor<S>::alloc(shape);
    he_normal_fill(t, fan_in, slope_, rng);
    t.set_requires_grad(true);
    params_.push_back({name, ParamRole::weight, t});
    return t;
  }

  Genotype g_;
  int classes_ = 0;
  S slope_;
  std::vector<Parameter<S>> params_;
  Stem<S> stem_;
  std::vector<std::unique_ptr<CompactCell<S>>> cells_;
  std::vector<Tensor<S>> proj1_, proj2_;
  ClassifierHead<S> head_;
};

}  // namespace hsinas
