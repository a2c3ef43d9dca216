#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hsinas/ops.hpp"

namespace hsinas {

enum class SpaceId { asym_d, sym_ud, sym_d, asym_ud };

inline const char* space_id_string(SpaceId s) {
  switch (s) {
    case SpaceId::asym_d: return "3d-asym-d";
    case SpaceId::sym_ud: return "3d-sym-ud";
    case SpaceId::sym_d: return "3d-sym-d";
    case SpaceId::asym_ud: return "3d-asym-ud";
  }
  fail(ErrKind::Contract, "bad space id");
}

inline SpaceId parse_space(const std::string& id) {
  for (SpaceId s : {SpaceId::asym_d, SpaceId::sym_ud, SpaceId::sym_d, SpaceId::asym_ud})
    if (id == space_id_string(s)) return s;
  fail(ErrKind::Config, "unknown search space '", id,
       "' (expected 3d-asym-d, 3d-sym-ud, 3d-sym-d or 3d-asym-ud)");
}

enum class ConvFamily { common, separable, skip, discard };

struct OpKind {
  SpaceId space;
  std::string name;
  int spatial_kernel = 1;   // kh = kw extent
  int spectral_kernel = 1;  // kd extent
  ConvFamily family = ConvFamily::common;
  bool decomposed = false;

  bool is_conv() const { return family == ConvFamily::common || family == ConvFamily::separable; }
};

// The 8 candidate operations of each space, in canonical order. The order is
// load-bearing: architecture weights index into it and ties resolve earlier
// entries first.
namespace spacedetail {

struct OpRow {
  const char* name;
  int spatial, spectral;
  ConvFamily family;
  bool decomposed;
};

inline std::vector<OpKind> make_ops(SpaceId space, std::initializer_list<OpRow> rows) {
  std::vector<OpKind> v;
  for (const OpRow& r : rows)
    v.push_back(OpKind{space, r.name, r.spatial, r.spectral, r.family, r.decomposed});
  v.push_back(OpKind{space, "skip_connection", 1, 1, ConvFamily::skip, false});
  v.push_back(OpKind{space, "discarding", 1, 1, ConvFamily::discard, false});
  return v;
}

}  // namespace spacedetail

inline const std::vector<OpKind>& space_ops(SpaceId space) {
  using spacedetail::make_ops;
  static const std::vector<OpKind> asym_d = make_ops(
      SpaceId::asym_d, {{"con_3-3", 3, 3, ConvFamily::common, true},
                        {"con_5-3", 5, 3, ConvFamily::common, true},
                        {"con_3-5", 3, 5, ConvFamily::common, true},
                        {"sep_3-3", 3, 3, ConvFamily::separable, true},
                        {"sep_5-3", 5, 3, ConvFamily::separable, true},
                        {"sep_3-5", 3, 5, ConvFamily::separable, true}});
  static const std::vector<OpKind> sym_ud = make_ops(
      SpaceId::sym_ud, {{"Con_3", 3, 3, ConvFamily::common, false},
                        {"Con_5", 5, 5, ConvFamily::common, false},
                        {"Con_7", 7, 7, ConvFamily::common, false},
                        {"Sep_3", 3, 3, ConvFamily::separable, false},
                        {"Sep_5", 5, 5, ConvFamily::separable, false},
                        {"Sep_7", 7, 7, ConvFamily::separable, false}});
  static const std::vector<OpKind> sym_d = make_ops(
      SpaceId::sym_d, {{"Dcon_3-3", 3, 3, ConvFamily::common, true},
                       {"Dcon_5-5", 5, 5, ConvFamily::common, true},
                       {"Dcon_7-7", 7, 7, ConvFamily::common, true},
                       {"Dsep_3-3", 3, 3, ConvFamily::separable, true},
                       {"Dsep_5-5", 5, 5, ConvFamily::separable, true},
                       {"Dsep_7-7", 7, 7, ConvFamily::separable, true}});
  // Single asymmetric kernels: the undecomposed counterparts of the asym_d
  // convs, pairing unequal spatial/spectral extents in one kernel.
  static const std::vector<OpKind> asym_ud = make_ops(
      SpaceId::asym_ud, {{"Udcon_3-3", 3, 3, ConvFamily::common, false},
                         {"Udcon_5-3", 5, 3, ConvFamily::common, false},
                         {"Udcon_3-5", 3, 5, ConvFamily::common, false},
                         {"Udsep_3-3", 3, 3, ConvFamily::separable, false},
                         {"Udsep_5-3", 5, 3, ConvFamily::separable, false},
                         {"Udsep_3-5", 3, 5, ConvFamily::separable, false}});
  switch (space) {
    case SpaceId::asym_d: return asym_d;
    case SpaceId::sym_ud: return sym_ud;
    case SpaceId::sym_d: return sym_d;
    case SpaceId::asym_ud: return asym_ud;
  }
  fail(ErrKind::Contract, "bad space id");
}

inline const OpKind& op_by_name(SpaceId space, const std::string& name) {
  for (const OpKind& k : space_ops(space))
    if (k.name == name) return k;
  fail(ErrKind::Config, "operation '", name, "' is not in space ", space_id_string(space));
}

// Trainable weight scalars of one op (convolution kernels only; BN affine
// terms and biases are excluded).
inline i64 count_params(const OpKind& kind, i64 cin, i64 cout) {
  check(cin >= 1 && cout >= 1, ErrKind::Contract, "channel counts must be positive");
  const i64 ks = kind.spatial_kernel, kd = kind.spectral_kernel;
  switch (kind.family) {
    case ConvFamily::common:
      if (kind.decomposed) return cout * cin * ks * ks + cout * cout * kd;
      return cout * cin * kd * ks * ks;
    case ConvFamily::separable:
      if (kind.decomposed) return cin * ks * ks + cout * cin + cout * kd + cout * cout;
      return cin * kd * ks * ks + cout * cin;
    case ConvFamily::skip:
    case ConvFamily::discard: return 0;
  }
  fail(ErrKind::Contract, "bad conv family");
}

// (spectral, spatial) extent of the region one output voxel depends on.
inline std::pair<int, int> receptive_field(const OpKind& kind) {
  if (!kind.is_conv()) return {1, 1};
  return {kind.spectral_kernel, kind.spatial_kernel};
}

template <class S>
void he_normal_fill(Tensor<S>& t, i64 fan_in, S leaky_slope, Rng& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + double(leaky_slope) * double(leaky_slope)));
  const double stddev = gain / std::sqrt(double(fan_in));
  for (i64 i = 0; i < t.numel(); i++) t.data()[i] = S(rng.normal() * stddev);
}

// One realized candidate op: LReLU -> conv stage(s) -> BN for conv kinds,
// identity for skip, a zero map for discard.
template <class S>
class OpInstance {
 public:
  OpInstance(const OpKind& kind, i64 cin, i64 cout, S leaky_slope, Rng& rng)
      : kind_(kind), cin_(cin), cout_(cout), slope_(leaky_slope) {
    check(cin >= 1 && cout >= 1, ErrKind::Contract, "channel counts must be positive");
    if (kind.family == ConvFamily::skip)
      check(cin == cout, ErrKind::Contract, "skip_connection requires cin == cout, got ", cin,
            " and ", cout);
    const i64 ks = kind.spatial_kernel, kd = kind.spectral_kernel;
    auto weight = [&](const char* nm, Shape sh, i64 fan_in) {
      Tensor<S> t = Tensor<S>::alloc(sh);
      he_normal_fill(t, fan_in, slope_, rng);
      t.set_requires_grad(true);
      params_.push_back({kind_.name + "." + nm, ParamRole::weight, t});
      return t;
    };
    if (kind.family == ConvFamily::common) {
      if (kind.decomposed) {
        w0_ = weight("w_spatial", {cout, cin, 1, ks, ks}, cin * ks * ks);
        w1_ = weight("w_spectral", {cout, cout, kd, 1, 1}, cout * kd);
      } else {
        w0_ = weight("w", {cout, cin, kd, ks, ks}, cin * kd * ks * ks);
      }
    } else if (kind.family == ConvFamily::separable) {
      if (kind.decomposed) {
        dw0_ = weight("dw_spatial", {cin, 1, ks, ks}, ks * ks);
        pw0_ = weight("pw_spatial", {cout, cin, 1, 1, 1}, cin);
        dw1_ = weight("dw_spectral", {cout, kd, 1, 1}, kd);
        pw1_ = weight("pw_spectral", {cout, cout, 1, 1, 1}, cout);
      } else {
        dw0_ = weight("dw", {cin, kd, ks, ks}, kd * ks * ks);
        pw0_ = weight("pw", {cout, cin, 1, 1, 1}, cin);
      }
    }
    if (kind.is_conv()) {
      Tensor<S> sc = Tensor<S>::full({cout}, S(1));
      Tensor<S> sh = Tensor<S>::zeros({cout});
      sc.set_requires_grad(true);
      sh.set_requires_grad(true);
      params_.push_back({kind_.name + ".bn_scale", ParamRole::bn_scale, sc});
      params_.push_back({kind_.name + ".bn_shift", ParamRole::bn_shift, sh});
      bn_scale_ = sc;
      bn_shift_ = sh;
      stats_ = RunningStats<S>(cout);
    }
  }

  const OpKind& kind() const { return kind_; }
  i64 cin() const { return cin_; }
  i64 cout() const { return cout_; }
  std::vector<Parameter<S>>& params() { return params_; }
  const std::vector<Parameter<S>>& params() const { return params_; }
  RunningStats<S>& stats() { return stats_; }

  Tensor<S> forward(const Tensor<S>& x, bool train) {
    check(x.shape().rank == 5, ErrKind::Dimension, "op input must be rank 5, got ",
          x.shape().str());
    check(x.shape()[1] == cin_, ErrKind::Dimension, "op expects ", cin_, " input channels, got ",
          x.shape()[1]);
    if (kind_.family == ConvFamily::skip) return x;
    if (kind_.family == ConvFamily::discard) {
      Shape s = x.shape();
      s.ext[1] = cout_;
      return Tensor<S>::zeros(s);
    }
    const i64 ks = kind_.spatial_kernel, kd = kind_.spectral_kernel;
    const i64 ps = (ks - 1) / 2, pd = (kd - 1) / 2;
    Tensor<S> h = leaky_relu(x, slope_);
    if (kind_.family == ConvFamily::common) {
      if (kind_.decomposed) {
        h = conv3d(h, w0_, Stride3{}, Pad3{0, ps, ps});
        h = conv3d(h, w1_, Stride3{}, Pad3{pd, 0, 0});
      } else {
        h = conv3d(h, w0_, Stride3{}, Pad3{pd, ps, ps});
      }
    } else {
      if (kind_.decomposed) {
        h = separable_conv3d(h, dw0_, pw0_, Stride3{}, Pad3{0, ps, ps});
        h = separable_conv3d(h, dw1_, pw1_, Stride3{}, Pad3{pd, 0, 0});
      } else {
        h = separable_conv3d(h, dw0_, pw0_, Stride3{}, Pad3{pd, ps, ps});
      }
    }
    return batch_norm(h, bn_scale_, bn_shift_, stats_, train);
  }

 private:
  OpKind kind_;
  i64 cin_, cout_;
  S slope_;
  std::vector<Parameter<S>> params_;
  Tensor<S> w0_, w1_;
  Tensor<S> dw0_, pw0_, dw1_, pw1_;
  Tensor<S> bn_scale_, bn_shift_;
  RunningStats<S> stats_{0};
};

template <class S>
OpInstance<S> build_op(const OpKind& kind, i64 cin, i64 cout, S leaky_slope, Rng& rng) {
  return OpInstance<S>(kind, cin, cout, leaky_slope, rng);
}

}  // namespace hsinas
