#pragma once

#include <string>
#include <vector>

#include "hsinas/search_space.hpp"

namespace hsinas {

// Two strided spectral-reducing conv+BN stages shared by the searchable and
// the final network. Registers its parameters under "stem.*".
template <class S>
struct Stem {
  Tensor<S> w1, w2;
  Tensor<S> bn1_scale, bn1_shift, bn2_scale, bn2_shift;
  RunningStats<S> rs1, rs2;
  S slope = S(0.01);

  Stem() = default;
  Stem(i64 channels, S leaky_slope, Rng& rng, std::vector<Parameter<S>>& reg)
      : rs1(channels), rs2(channels), slope(leaky_slope) {
    auto weight = [&](const char* name, Shape sh, i64 fan_in) {
      Tensor<S> t = Tensor<S>::alloc(sh);
      he_normal_fill(t, fan_in, slope, rng);
      t.set_requires_grad(true);
      reg.push_back({name, ParamRole::weight, t});
      return t;
    };
    auto affine = [&](const char* name, Tensor<S>& sc, Tensor<S>& sh) {
      sc = Tensor<S>::full({channels}, S(1));
      sh = Tensor<S>::zeros({channels});
      sc.set_requires_grad(true);
      sh.set_requires_grad(true);
      reg.push_back({std::string(name) + ".scale", ParamRole::bn_scale, sc});
      reg.push_back({std::string(name) + ".shift", ParamRole::bn_shift, sh});
    };
    w1 = weight("stem.conv1", {channels, 1, 5, 3, 3}, 5 * 3 * 3);
    affine("stem.bn1", bn1_scale, bn1_shift);
    w2 = weight("stem.conv2", {channels, channels, 5, 3, 3}, channels * 5 * 3 * 3);
    affine("stem.bn2", bn2_scale, bn2_shift);
  }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    check(x.shape().rank == 5 && x.shape()[1] == 1, ErrKind::Dimension,
          "expected a [B,1,bands,H,W] batch, got ", x.shape().str());
    Tensor<S> h = conv3d(x, w1, Stride3{2, 1, 1}, Pad3{2, 1, 1});
    h = batch_norm(h, bn1_scale, bn1_shift, rs1, train);
    h = conv3d(h, w2, Stride3{2, 1, 1}, Pad3{2, 1, 1});
    return batch_norm(h, bn2_scale, bn2_shift, rs2, train);
  }
};

// Per-stream pointwise compression, channel concat, spectral average, then a
// 3x3 and a 1x1 2D convolution down to class logits. Shared by both networks;
// the final network has a single input stream.
template <class S>
struct ClassifierHead {
  std::vector<Tensor<S>> compress;
  Tensor<S> conv3x3, conv1x1;
  S slope = S(0.01);

  ClassifierHead() = default;
  ClassifierHead(const std::vector<i64>& in_channels, i64 common, i64 classes, S leaky_slope,
                 Rng& rng, std::vector<Parameter<S>>& reg)
      : slope(leaky_slope) {
    auto weight = [&](const std::string& name, Shape sh, i64 fan_in) {
      Tensor<S> t = Tensor<S>::alloc(sh);
      he_normal_fill(t, fan_in, slope, rng);
      t.set_requires_grad(true);
      reg.push_back({name, ParamRole::weight, t});
      return t;
    };
    for (size_t i = 0; i < in_channels.size(); i++)
      compress.push_back(weight("classifier.compress" + std::to_string(i),
                                {common, in_channels[i], 1, 1, 1}, in_channels[i]));
    const i64 cat = i64(in_channels.size()) * common;
    conv3x3 = weight("classifier.conv3x3", {common, cat, 3, 3}, cat * 9);
    conv1x1 = weight("classifier.conv1x1", {classes, common, 1, 1}, common);
  }

  Tensor<S> forward(const std::vector<Tensor<S>>& last) {
    check(last.size() == compress.size(), ErrKind::Dimension, "classifier expects ",
          compress.size(), " input streams, got ", last.size());
    std::vector<Tensor<S>> compressed;
    for (size_t i = 0; i < last.size(); i++)
      compressed.push_back(conv3d(last[i], compress[i], Stride3{}, Pad3{}));
    Tensor<S> cat = concat_channels<S>(compressed);
    Tensor<S> flat = spectral_avg(cat);
    Tensor<S> h = conv2d(flat, conv3x3, 1, 1, 1, 1);
    h = leaky_relu(h, slope);
    return conv2d(h, conv1x1, 1, 1, 0, 0);
  }
};

}  // namespace hsinas
