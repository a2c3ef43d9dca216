#pragma once

#include <algorithm>
#include <cstring>
#include <memory>
#include <vector>

#include "hsinas/gemm.hpp"
#include "hsinas/tensor.hpp"

namespace hsinas {

struct Stride3 {
  i64 d = 1, h = 1, w = 1;
};

struct Pad3 {
  i64 d = 0, h = 0, w = 0;
};

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), ErrKind::Dimension, "add shapes differ: ", a.shape().str(), " vs ",
        b.shape().str());
  Tensor<S> out = Tensor<S>::alloc(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  i64 n = a.numel();
  for (i64 i = 0; i < n; i++) po[i] = pa[i] + pb[i];
  if (grad_needed<S>({&a, &b})) {
    out.attach({a, b}, [an = a.handle(), bn = b.handle(), n](const S* g, GradSink<S>& sink) {
      if (S* ga = sink.slot(an.get()))
        for (i64 i = 0; i < n; i++) ga[i] += g[i];
      if (S* gb = sink.slot(bn.get()))
        for (i64 i = 0; i < n; i++) gb[i] += g[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), ErrKind::Dimension, "mul shapes differ: ", a.shape().str(), " vs ",
        b.shape().str());
  Tensor<S> out = Tensor<S>::alloc(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  i64 n = a.numel();
  for (i64 i = 0; i < n; i++) po[i] = pa[i] * pb[i];
  if (grad_needed<S>({&a, &b})) {
    out.attach({a, b}, [an = a.handle(), bn = b.handle(), n](const S* g, GradSink<S>& sink) {
      if (S* ga = sink.slot(an.get()))
        for (i64 i = 0; i < n; i++) ga[i] += g[i] * bn->data[size_t(i)];
      if (S* gb = sink.slot(bn.get()))
        for (i64 i = 0; i < n; i++) gb[i] += g[i] * an->data[size_t(i)];
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S v) {
  Tensor<S> out = Tensor<S>::alloc(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  i64 n = a.numel();
  for (i64 i = 0; i < n; i++) po[i] = pa[i] * v;
  if (grad_needed<S>({&a})) {
    out.attach({a}, [an = a.handle(), v, n](const S* g, GradSink<S>& sink) {
      if (S* ga = sink.slot(an.get()))
        for (i64 i = 0; i < n; i++) ga[i] += g[i] * v;
    });
  }
  return out;
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::alloc({1});
  const S* pa = a.data();
  i64 n = a.numel();
  S acc = 0;
  for (i64 i = 0; i < n; i++) acc += pa[i];
  out.data()[0] = acc;
  if (grad_needed<S>({&a})) {
    out.attach({a}, [an = a.handle(), n](const S* g, GradSink<S>& sink) {
      if (S* ga = sink.slot(an.get()))
        for (i64 i = 0; i < n; i++) ga[i] += g[0];
    });
  }
  return out;
}

template <class S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope) {
  check(slope > S(0) && slope < S(1), ErrKind::Contract, "leaky_relu slope must lie in (0,1), got ",
        slope);
  Tensor<S> out = Tensor<S>::alloc(x.shape());
  const S* px = x.data();
  S* po = out.data();
  i64 n = x.numel();
  for (i64 i = 0; i < n; i++) po[i] = px[i] >= S(0) ? px[i] : slope * px[i];
  if (grad_needed<S>({&x})) {
    out.attach({x}, [xn = x.handle(), slope, n](const S* g, GradSink<S>& sink) {
      if (S* gx = sink.slot(xn.get())) {
        const S* px = xn->data.data();
        for (i64 i = 0; i < n; i++) gx[i] += px[i] >= S(0) ? g[i] : slope * g[i];
      }
    });
  }
  return out;
}

// Mean over the band axis: [B,C,D,H,W] -> [B,C,H,W].
template <class S>
Tensor<S> spectral_avg(const Tensor<S>& x) {
  check(x.shape().rank == 5, ErrKind::Dimension, "spectral_avg expects rank-5 input, got ",
        x.shape().str());
  i64 bc = x.shape()[0] * x.shape()[1], d = x.shape()[2], hw = x.shape()[3] * x.shape()[4];
  Tensor<S> out = Tensor<S>::alloc({x.shape()[0], x.shape()[1], x.shape()[3], x.shape()[4]});
  const S* px = x.data();
  S* po = out.data();
  S inv = S(1) / S(d);
  for (i64 i = 0; i < bc; i++) {
    const S* src = px + i * d * hw;
    S* dst = po + i * hw;
    for (i64 j = 0; j < hw; j++) dst[j] = src[j];
    for (i64 z = 1; z < d; z++) {
      const S* plane = src + z * hw;
      for (i64 j = 0; j < hw; j++) dst[j] += plane[j];
    }
    for (i64 j = 0; j < hw; j++) dst[j] *= inv;
  }
  if (grad_needed<S>({&x})) {
    out.attach({x}, [xn = x.handle(), bc, d, hw, inv](const S* g, GradSink<S>& sink) {
      if (S* gx = sink.slot(xn.get())) {
        for (i64 i = 0; i < bc; i++) {
          const S* gsl = g + i * hw;
          S* dst = gx + i * d * hw;
          for (i64 z = 0; z < d; z++) {
            S* plane = dst + z * hw;
            for (i64 j = 0; j < hw; j++) plane[j] += gsl[j] * inv;
          }
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  check(axis >= 0 && axis < x.shape().rank, ErrKind::Dimension, "softmax axis ", axis,
        " out of range for ", x.shape().str());
  i64 outer = 1, n = x.shape()[axis], inner = 1;
  for (int i = 0; i < axis; i++) outer *= x.shape()[i];
  for (int i = axis + 1; i < x.shape().rank; i++) inner *= x.shape()[i];
  Tensor<S> out = Tensor<S>::alloc(x.shape());
  const S* px = x.data();
  S* po = out.data();
  for (i64 o = 0; o < outer; o++)
    for (i64 in = 0; in < inner; in++) {
      const S* src = px + (o * n) * inner + in;
      S* dst = po + (o * n) * inner + in;
      S mx = src[0];
      for (i64 j = 1; j < n; j++) mx = std::max(mx, src[j * inner]);
      S denom = 0;
      for (i64 j = 0; j < n; j++) {
        S e = std::exp(src[j * inner] - mx);
        dst[j * inner] = e;
        denom += e;
      }
      S inv = S(1) / denom;
      for (i64 j = 0; j < n; j++) dst[j * inner] *= inv;
    }
  if (grad_needed<S>({&x})) {
    // Raw self-pointer: the closure is owned by the node, so no cycle and no
    // lifetime hazard; capturing the handle would leak the graph.
    out.attach({x}, [xn = x.handle(), self = out.node(), outer, n, inner](const S* g,
                                                                          GradSink<S>& sink) {
      if (S* gx = sink.slot(xn.get())) {
        const S* py = self->data.data();
        for (i64 o = 0; o < outer; o++)
          for (i64 in = 0; in < inner; in++) {
            i64 base = (o * n) * inner + in;
            S dot = 0;
            for (i64 j = 0; j < n; j++) dot += g[base + j * inner] * py[base + j * inner];
            for (i64 j = 0; j < n; j++)
              gx[base + j * inner] += py[base + j * inner] * (g[base + j * inner] - dot);
          }
      }
    });
  }
  return out;
}

// y = sum_i w[slot[i]] * xs[i]; the Eq.1/Eq.4 mixing primitive. Entries of w
// not referenced by any slot (e.g. a zero-op's weight) receive zero gradient.
template <class S>
Tensor<S> weighted_sum(const std::vector<Tensor<S>>& xs, const Tensor<S>& w,
                       const std::vector<int>& slot) {
  check(!xs.empty(), ErrKind::Contract, "weighted_sum needs at least one term");
  check(xs.size() == slot.size(), ErrKind::Contract, "weighted_sum slot count ", slot.size(),
        " != term count ", xs.size());
  for (size_t i = 0; i < xs.size(); i++) {
    check(xs[i].shape() == xs[0].shape(), ErrKind::Dimension, "weighted_sum term ", i,
          " shape mismatch: ", xs[i].shape().str());
    check(slot[i] >= 0 && i64(slot[i]) < w.numel(), ErrKind::Contract, "weighted_sum slot ",
          slot[i], " out of range");
  }
  i64 n = xs[0].numel();
  Tensor<S> out = Tensor<S>::alloc(xs[0].shape());
  S* po = out.data();
  {
    const S* p0 = xs[0].data();
    S w0 = w.data()[slot[0]];
    for (i64 i = 0; i < n; i++) po[i] = w0 * p0[i];
    for (size_t t = 1; t < xs.size(); t++) {
      const S* pt = xs[t].data();
      S wt = w.data()[slot[t]];
      for (i64 i = 0; i < n; i++) po[i] += wt * pt[i];
    }
  }
  bool need = grad_needed<S>({&w});
  for (const auto& x : xs) need = need || grad_needed<S>({&x});
  if (need) {
    std::vector<Tensor<S>> parents = xs;
    parents.push_back(w);
    std::vector<std::shared_ptr<TensorNode<S>>> xh;
    for (const auto& x : xs) xh.push_back(x.handle());
    out.attach(parents,
               [xh, wn = w.handle(), slot, n](const S* g, GradSink<S>& sink) {
                 S* gw = sink.slot(wn.get());
                 for (size_t t = 0; t < xh.size(); t++) {
                   if (S* gx = sink.slot(xh[t].get())) {
                     S wt = wn->data[size_t(slot[t])];
                     for (i64 i = 0; i < n; i++) gx[i] += wt * g[i];
                   }
                   if (gw) {
                     const S* pt = xh[t]->data.data();
                     S dot = 0;
                     for (i64 i = 0; i < n; i++) dot += pt[i] * g[i];
                     gw[slot[t]] += dot;
                   }
                 }
               });
  }
  return out;
}

// Channel concatenation along axis 1 for equal-rank tensors.
template <class S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& xs) {
  check(!xs.empty(), ErrKind::Contract, "concat_channels needs at least one input");
  const Shape& s0 = xs[0].shape();
  check(s0.rank >= 2, ErrKind::Dimension, "concat_channels expects rank >= 2, got ", s0.str());
  i64 b = s0[0], ctotal = 0, rest = 1;
  for (int i = 2; i < s0.rank; i++) rest *= s0[i];
  for (const auto& x : xs) {
    check(x.shape().rank == s0.rank && x.shape()[0] == b, ErrKind::Dimension,
          "concat_channels batch/rank mismatch: ", x.shape().str());
    i64 r = 1;
    for (int i = 2; i < x.shape().rank; i++) r *= x.shape()[i];
    check(r == rest, ErrKind::Dimension, "concat_channels trailing extents differ: ",
          x.shape().str(), " vs ", s0.str());
    ctotal += x.shape()[1];
  }
  Shape os = s0;
  os[1] = ctotal;
  Tensor<S> out = Tensor<S>::alloc(os);
  S* po = out.data();
  for (i64 bi = 0; bi < b; bi++) {
    S* dst = po + bi * ctotal * rest;
    for (const auto& x : xs) {
      i64 len = x.shape()[1] * rest;
      std::memcpy(dst, x.data() + bi * len, size_t(len) * sizeof(S));
      dst += len;
    }
  }
  bool need = false;
  for (const auto& x : xs) need = need || grad_needed<S>({&x});
  if (need) {
    std::vector<std::shared_ptr<TensorNode<S>>> xh;
    for (const auto& x : xs) xh.push_back(x.handle());
    out.attach(xs, [xh, b, ctotal, rest](const S* g, GradSink<S>& sink) {
      for (i64 bi = 0; bi < b; bi++) {
        const S* src = g + bi * ctotal * rest;
        for (const auto& h : xh) {
          i64 len = h->shape[1] * rest;
          if (S* gx = sink.slot(h.get())) {
            S* dst = gx + bi * len;
            for (i64 i = 0; i < len; i++) dst[i] += src[i];
          }
          src += len;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution core: im2col + GEMM on channels-first data.

struct ConvDims {
  i64 b, cin, d, h, w;
  i64 cout, kd, kh, kw;
  i64 sd, sh, sw, pd, ph, pw;
  i64 od, oh, ow;
  i64 voxels() const { return od * oh * ow; }
  i64 taps() const { return kd * kh * kw; }
  i64 cols() const { return cin * taps(); }
};

inline i64 conv_extent(i64 in, i64 k, i64 s, i64 p, const char* axis) {
  check(s >= 1, ErrKind::Contract, "stride must be >= 1 on axis ", axis);
  i64 padded = in + 2 * p;
  check(k <= padded, ErrKind::Dimension, "kernel extent ", k, " exceeds padded input ", padded,
        " on axis ", axis);
  return (padded - k) / s + 1;
}

inline ConvDims make_conv_dims(const Shape& x, const Shape& k, Stride3 stride, Pad3 pad) {
  check(x.rank == 5, ErrKind::Dimension, "conv input must be rank 5, got ", x.str());
  check(k.rank == 5, ErrKind::Dimension, "conv kernel must be rank 5, got ", k.str());
  check(x[1] == k[1], ErrKind::Dimension, "conv channel mismatch: input has ", x[1],
        ", kernel expects ", k[1]);
  ConvDims cd;
  cd.b = x[0];
  cd.cin = x[1];
  cd.d = x[2];
  cd.h = x[3];
  cd.w = x[4];
  cd.cout = k[0];
  cd.kd = k[2];
  cd.kh = k[3];
  cd.kw = k[4];
  cd.sd = stride.d;
  cd.sh = stride.h;
  cd.sw = stride.w;
  cd.pd = pad.d;
  cd.ph = pad.h;
  cd.pw = pad.w;
  cd.od = conv_extent(cd.d, cd.kd, cd.sd, cd.pd, "bands");
  cd.oh = conv_extent(cd.h, cd.kh, cd.sh, cd.ph, "height");
  cd.ow = conv_extent(cd.w, cd.kw, cd.sw, cd.pw, "width");
  return cd;
}

// col[b*voxels + voxel][cin*taps] with tap order (cin, kd, kh, kw), matching
// the natural [cout][cin][kd][kh][kw] kernel flattening. Fully overwrites col
// (padding taps written as zeros), so the buffer may be uninitialized.
template <class S>
void im2col(const S* x, const ConvDims& cd, S* col) {
  i64 plane = cd.h * cd.w;
  i64 chan = cd.d * plane;
  for (i64 b = 0; b < cd.b; b++) {
    const S* xb = x + b * cd.cin * chan;
    S* row = col + b * cd.voxels() * cd.cols();
    for (i64 zo = 0; zo < cd.od; zo++)
      for (i64 yo = 0; yo < cd.oh; yo++)
        for (i64 xo = 0; xo < cd.ow; xo++) {
          i64 z0 = zo * cd.sd - cd.pd, y0 = yo * cd.sh - cd.ph, x0 = xo * cd.sw - cd.pw;
          S* out = row;
          row += cd.cols();
          for (i64 c = 0; c < cd.cin; c++) {
            const S* xc = xb + c * chan;
            for (i64 dz = 0; dz < cd.kd; dz++) {
              i64 z = z0 + dz;
              if (z < 0 || z >= cd.d) {
                for (i64 i = 0; i < cd.kh * cd.kw; i++) out[i] = S(0);
                out += cd.kh * cd.kw;
                continue;
              }
              const S* xz = xc + z * plane;
              for (i64 dy = 0; dy < cd.kh; dy++) {
                i64 y = y0 + dy;
                if (y < 0 || y >= cd.h) {
                  for (i64 i = 0; i < cd.kw; i++) out[i] = S(0);
                  out += cd.kw;
                  continue;
                }
                const S* xy = xz + y * cd.w;
                for (i64 dx = 0; dx < cd.kw; dx++) {
                  i64 xx = x0 + dx;
                  *out++ = (xx < 0 || xx >= cd.w) ? S(0) : xy[xx];
                }
              }
            }
          }
        }
  }
}

// Scatter-add of dcol (same layout as im2col output) back onto the input grad.
template <class S>
void col2im_acc(const S* dcol, const ConvDims& cd, S* dx) {
  i64 plane = cd.h * cd.w;
  i64 chan = cd.d * plane;
  for (i64 b = 0; b < cd.b; b++) {
    S* xb = dx + b * cd.cin * chan;
    const S* row = dcol + b * cd.voxels() * cd.cols();
    for (i64 zo = 0; zo < cd.od; zo++)
      for (i64 yo = 0; yo < cd.oh; yo++)
        for (i64 xo = 0; xo < cd.ow; xo++) {
          i64 z0 = zo * cd.sd - cd.pd, y0 = yo * cd.sh - cd.ph, x0 = xo * cd.sw - cd.pw;
          const S* in = row;
          row += cd.cols();
          for (i64 c = 0; c < cd.cin; c++) {
            S* xc = xb + c * chan;
            for (i64 dz = 0; dz < cd.kd; dz++) {
              i64 z = z0 + dz;
              if (z < 0 || z >= cd.d) {
                in += cd.kh * cd.kw;
                continue;
              }
              S* xz = xc + z * plane;
              for (i64 dy = 0; dy < cd.kh; dy++) {
                i64 y = y0 + dy;
                if (y < 0 || y >= cd.h) {
                  in += cd.kw;
                  continue;
                }
                S* xy = xz + y * cd.w;
                for (i64 dx = 0; dx < cd.kw; dx++) {
                  i64 xx = x0 + dx;
                  S v = *in++;
                  if (xx >= 0 && xx < cd.w) xy[xx] += v;
                }
              }
            }
          }
        }
  }
}

// [voxel][cout] -> planar [cout][voxel] blocks per batch element.
template <class S>
void voxel_major_to_planar(const S* mn, i64 b, i64 v, i64 c, S* planar) {
  for (i64 bi = 0; bi < b; bi++) {
    const S* src = mn + bi * v * c;
    S* dst = planar + bi * c * v;
    for (i64 vi = 0; vi < v; vi++)
      for (i64 ci = 0; ci < c; ci++) dst[ci * v + vi] = src[vi * c + ci];
  }
}

template <class S>
void planar_to_voxel_major(const S* planar, i64 b, i64 v, i64 c, S* mn) {
  for (i64 bi = 0; bi < b; bi++) {
    const S* src = planar + bi * c * v;
    S* dst = mn + bi * v * c;
    for (i64 vi = 0; vi < v; vi++)
      for (i64 ci = 0; ci < c; ci++) dst[vi * c + ci] = src[ci * v + vi];
  }
}

namespace convdetail {

template <class S>
using Buf = std::unique_ptr<S[]>;

template <class S>
Buf<S> make_buf(i64 n) {
  return std::make_unique_for_overwrite<S[]>(size_t(n));
}

// Forward: out planar [B][Cout][voxels]; ker is natural [Cout][Cin*taps].
// The multiply runs once per sample, not batched: GEMM backends pick their
// blocking (and so their summation order) from the matrix sizes, and folding
// the batch into m would make a sample's output depend on batch size.
template <class S>
void conv_forward(const S* x, const S* ker, const ConvDims& cd, S* out) {
  i64 v = cd.voxels(), kdim = cd.cols(), n = cd.cout;
  Buf<S> col = make_buf<S>(cd.b * v * kdim);
  im2col(x, cd, col.get());
  Buf<S> kt = make_buf<S>(kdim * n);
  for (i64 co = 0; co < n; co++)
    for (i64 kk = 0; kk < kdim; kk++) kt[size_t(kk * n + co)] = ker[co * kdim + kk];
  Buf<S> mn = make_buf<S>(cd.b * v * n);
  for (i64 b = 0; b < cd.b; b++)
    gemm(v, n, kdim, col.get() + b * v * kdim, kt.get(), mn.get() + b * v * n, false);
  voxel_major_to_planar(mn.get(), cd.b, v, n, out);
}

// Backward: regenerates im2col from the saved input instead of storing it.
template <class S>
void conv_backward(const S* x, const S* ker, const ConvDims& cd, const S* gout_planar, S* gx,
                   S* gker) {
  i64 m = cd.b * cd.voxels(), kdim = cd.cols(), n = cd.cout;
  Buf<S> gmn = make_buf<S>(m * n);
  planar_to_voxel_major(gout_planar, cd.b, cd.voxels(), n, gmn.get());
  if (gker) {
    Buf<S> col = make_buf<S>(m * kdim);
    im2col(x, cd, col.get());
    std::vector<S> gkt(size_t(kdim * n), S(0));
    gemm_at_b_acc(kdim, n, m, col.get(), gmn.get(), gkt.data());
    for (i64 co = 0; co < n; co++)
      for (i64 kk = 0; kk < kdim; kk++) gker[co * kdim + kk] += gkt[size_t(kk * n + co)];
  }
  if (gx) {
    Buf<S> gcol = make_buf<S>(m * kdim);
    gemm(m, kdim, n, gmn.get(), ker, gcol.get(), false);
    col2im_acc(gcol.get(), cd, gx);
  }
}

}  // namespace convdetail

// 3D convolution, input [B,Cin,D,H,W], kernel [Cout,Cin,kd,kh,kw], no bias.
template <class S>
Tensor<S> conv3d(const Tensor<S>& x, const Tensor<S>& k, Stride3 stride, Pad3 pad) {
  ConvDims cd = make_conv_dims(x.shape(), k.shape(), stride, pad);
  Tensor<S> out = Tensor<S>::alloc({cd.b, cd.cout, cd.od, cd.oh, cd.ow});
  convdetail::conv_forward(x.data(), k.data(), cd, out.data());
  if (grad_needed<S>({&x, &k})) {
    out.attach({x, k}, [xn = x.handle(), kn = k.handle(), cd](const S* g, GradSink<S>& sink) {
      S* gx = sink.slot(xn.get());
      S* gk = sink.slot(kn.get());
      convdetail::conv_backward(xn->data.data(), kn->data.data(), cd, g, gx, gk);
    });
  }
  return out;
}

// 2D convolution for the classifier head: same core with a single band.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& k, i64 sh, i64 sw, i64 ph, i64 pw) {
  check(x.shape().rank == 4, ErrKind::Dimension, "conv2d input must be rank 4, got ",
        x.shape().str());
  check(k.shape().rank == 4, ErrKind::Dimension, "conv2d kernel must be rank 4, got ",
        k.shape().str());
  Shape x5{x.shape()[0], x.shape()[1], 1, x.shape()[2], x.shape()[3]};
  Shape k5{k.shape()[0], k.shape()[1], 1, k.shape()[2], k.shape()[3]};
  ConvDims cd = make_conv_dims(x5, k5, Stride3{1, sh, sw}, Pad3{0, ph, pw});
  Tensor<S> out = Tensor<S>::alloc({cd.b, cd.cout, cd.oh, cd.ow});
  convdetail::conv_forward(x.data(), k.data(), cd, out.data());
  if (grad_needed<S>({&x, &k})) {
    out.attach({x, k}, [xn = x.handle(), kn = k.handle(), cd](const S* g, GradSink<S>& sink) {
      S* gx = sink.slot(xn.get());
      S* gk = sink.slot(kn.get());
      convdetail::conv_backward(xn->data.data(), kn->data.data(), cd, g, gx, gk);
    });
  }
  return out;
}

// Depthwise 3D convolution: one filter per channel, kernel [C,kd,kh,kw].
template <class S>
Tensor<S> depthwise_conv3d(const Tensor<S>& x, const Tensor<S>& k, Stride3 stride, Pad3 pad) {
  check(x.shape().rank == 5, ErrKind::Dimension, "depthwise input must be rank 5, got ",
        x.shape().str());
  check(k.shape().rank == 4, ErrKind::Dimension, "depthwise kernel must be [C,kd,kh,kw], got ",
        k.shape().str());
  check(x.shape()[1] == k.shape()[0], ErrKind::Dimension, "depthwise channel mismatch: input has ",
        x.shape()[1], ", kernel has ", k.shape()[0]);
  Shape k5{k.shape()[0], 1, k.shape()[1], k.shape()[2], k.shape()[3]};
  Shape x5 = x.shape();
  Shape xone{1, 1, x5[2], x5[3], x5[4]};
  ConvDims cd = make_conv_dims(xone, {1, 1, k5[2], k5[3], k5[4]}, stride, pad);

  i64 b = x5[0], c = x5[1];
  i64 chan_in = x5[2] * x5[3] * x5[4];
  i64 chan_out = cd.od * cd.oh * cd.ow;
  i64 taps = cd.taps();
  Tensor<S> out = Tensor<S>::alloc({b, c, cd.od, cd.oh, cd.ow});

  auto run = [cd, b, c, chan_in, chan_out, taps](const S* px, const S* pk, S* po) {
    std::memset(po, 0, size_t(b * c * chan_out) * sizeof(S));
    i64 plane = cd.h * cd.w;
    for (i64 bc = 0; bc < b * c; bc++) {
      const S* xin = px + bc * chan_in;
      S* xout = po + bc * chan_out;
      const S* kc = pk + (bc % c) * taps;
      i64 tap = 0;
      for (i64 dz = 0; dz < cd.kd; dz++)
        for (i64 dy = 0; dy < cd.kh; dy++)
          for (i64 dx = 0; dx < cd.kw; dx++, tap++) {
            S wv = kc[tap];
            for (i64 zo = 0; zo < cd.od; zo++) {
              i64 z = zo * cd.sd - cd.pd + dz;
              if (z < 0 || z >= cd.d) continue;
              for (i64 yo = 0; yo < cd.oh; yo++) {
                i64 y = yo * cd.sh - cd.ph + dy;
                if (y < 0 || y >= cd.h) continue;
                const S* src = xin + z * plane + y * cd.w;
                S* dst = xout + (zo * cd.oh + yo) * cd.ow;
                for (i64 xo = 0; xo < cd.ow; xo++) {
                  i64 xx = xo * cd.sw - cd.pw + dx;
                  if (xx >= 0 && xx < cd.w) dst[xo] += wv * src[xx];
                }
              }
            }
          }
    }
  };
  run(x.data(), k.data(), out.data());

  if (grad_needed<S>({&x, &k})) {
    out.attach({x, k}, [xn = x.handle(), kn = k.handle(), cd, b, c, chan_in, chan_out,
                        taps](const S* g, GradSink<S>& sink) {
      S* gx = sink.slot(xn.get());
      S* gk = sink.slot(kn.get());
      i64 plane = cd.h * cd.w;
      for (i64 bc = 0; bc < b * c; bc++) {
        const S* xin = xn->data.data() + bc * chan_in;
        const S* gout = g + bc * chan_out;
        const S* kc = kn->data.data() + (bc % c) * taps;
        S* gxc = gx ? gx + bc * chan_in : nullptr;
        S* gkc = gk ? gk + (bc % c) * taps : nullptr;
        i64 tap = 0;
        for (i64 dz = 0; dz < cd.kd; dz++)
          for (i64 dy = 0; dy < cd.kh; dy++)
            for (i64 dx = 0; dx < cd.kw; dx++, tap++) {
              S wv = kc[tap];
              S wacc = 0;
              for (i64 zo = 0; zo < cd.od; zo++) {
                i64 z = zo * cd.sd - cd.pd + dz;
                if (z < 0 || z >= cd.d) continue;
                for (i64 yo = 0; yo < cd.oh; yo++) {
                  i64 y = yo * cd.sh - cd.ph + dy;
                  if (y < 0 || y >= cd.h) continue;
                  const S* gsrc = gout + (zo * cd.oh + yo) * cd.ow;
                  const S* xsrc = xin + z * plane + y * cd.w;
                  S* gxrow = gxc ? gxc + z * plane + y * cd.w : nullptr;
                  for (i64 xo = 0; xo < cd.ow; xo++) {
                    i64 xx = xo * cd.sw - cd.pw + dx;
                    if (xx < 0 || xx >= cd.w) continue;
                    if (gkc) wacc += gsrc[xo] * xsrc[xx];
                    if (gxrow) gxrow[xx] += wv * gsrc[xo];
                  }
                }
              }
              if (gkc) gkc[tap] += wacc;
            }
      }
    });
  }
  return out;
}

// Depthwise followed by 1x1x1 pointwise channel mixing.
template <class S>
Tensor<S> separable_conv3d(const Tensor<S>& x, const Tensor<S>& depthwise,
                           const Tensor<S>& pointwise, Stride3 stride, Pad3 pad) {
  check(pointwise.shape().rank == 5 && pointwise.shape()[2] == 1 && pointwise.shape()[3] == 1 &&
            pointwise.shape()[4] == 1,
        ErrKind::Dimension, "pointwise kernel must be [Cout,Cin,1,1,1], got ",
        pointwise.shape().str());
  Tensor<S> mid = depthwise_conv3d(x, depthwise, stride, pad);
  return conv3d(mid, pointwise, Stride3{}, Pad3{});
}

// ---------------------------------------------------------------------------
// Batch normalization over the channel axis (axis 1) of rank-4/5 tensors.

template <class S>
struct RunningStats {
  std::vector<S> mean, var;
  explicit RunningStats(i64 channels = 0)
      : mean(size_t(channels), S(0)), var(size_t(channels), S(1)) {}
};

template <class S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& sc, const Tensor<S>& sh,
                     RunningStats<S>& rs, bool train, S eps = S(1e-5), S momentum = S(0.1)) {
  const Shape& xs = x.shape();
  check(xs.rank >= 3, ErrKind::Dimension, "batch_norm expects rank >= 3, got ", xs.str());
  i64 b = xs[0], c = xs[1], rest = 1;
  for (int i = 2; i < xs.rank; i++) rest *= xs[i];
  check(sc.numel() == c && sh.numel() == c, ErrKind::Dimension, "batch_norm affine size ",
        sc.numel(), "/", sh.numel(), " != channel count ", c);
  check(i64(rs.mean.size()) == c && i64(rs.var.size()) == c, ErrKind::Dimension,
        "batch_norm running stats sized ", rs.mean.size(), " != channel count ", c);
  i64 n = b * rest;

  Tensor<S> out = Tensor<S>::alloc(xs);
  const S* px = x.data();
  S* po = out.data();

  const size_t cc = size_t(c);
  std::vector<S> mean(cc), inv_std(cc);
  if (train) {
    for (i64 ci = 0; ci < c; ci++) {
      S m = 0;
      for (i64 bi = 0; bi < b; bi++) {
        const S* src = px + (bi * c + ci) * rest;
        for (i64 i = 0; i < rest; i++) m += src[i];
      }
      m /= S(n);
      S v = 0;
      for (i64 bi = 0; bi < b; bi++) {
        const S* src = px + (bi * c + ci) * rest;
        for (i64 i = 0; i < rest; i++) {
          S d = src[i] - m;
          v += d * d;
        }
      }
      v /= S(n);
      mean[size_t(ci)] = m;
      inv_std[size_t(ci)] = S(1) / std::sqrt(v + eps);
      rs.mean[size_t(ci)] = (S(1) - momentum) * rs.mean[size_t(ci)] + momentum * m;
      rs.var[size_t(ci)] = (S(1) - momentum) * rs.var[size_t(ci)] + momentum * v;
    }
  } else {
    for (i64 ci = 0; ci < c; ci++) {
      mean[size_t(ci)] = rs.mean[size_t(ci)];
      inv_std[size_t(ci)] = S(1) / std::sqrt(rs.var[size_t(ci)] + eps);
    }
  }

  for (i64 bi = 0; bi < b; bi++)
    for (i64 ci = 0; ci < c; ci++) {
      const S* src = px + (bi * c + ci) * rest;
      S* dst = po + (bi * c + ci) * rest;
      S a = sc.data()[ci] * inv_std[size_t(ci)];
      S off = sh.data()[ci] - mean[size_t(ci)] * a;
      for (i64 i = 0; i < rest; i++) dst[i] = a * src[i] + off;
    }

  if (grad_needed<S>({&x, &sc, &sh})) {
    out.attach({x, sc, sh}, [xn = x.handle(), scn = sc.handle(), shn = sh.handle(), mean, inv_std,
                             b, c, rest, n, train](const S* g, GradSink<S>& sink) {
      S* gx = sink.slot(xn.get());
      S* gsc = sink.slot(scn.get());
      S* gsh = sink.slot(shn.get());
      const S* px = xn->data.data();
      for (i64 ci = 0; ci < c; ci++) {
        S m = mean[size_t(ci)], istd = inv_std[size_t(ci)];
        S sum_g = 0, sum_gx = 0;
        for (i64 bi = 0; bi < b; bi++) {
          const S* gs = g + (bi * c + ci) * rest;
          const S* xsrc = px + (bi * c + ci) * rest;
          for (i64 i = 0; i < rest; i++) {
            sum_g += gs[i];
            sum_gx += gs[i] * (xsrc[i] - m) * istd;
          }
        }
        if (gsc) gsc[ci] += sum_gx;
        if (gsh) gsh[ci] += sum_g;
        if (gx) {
          S sc_v = scn->data[size_t(ci)];
          if (train) {
            S mg = sum_g / S(n), mgx = sum_gx / S(n);
            for (i64 bi = 0; bi < b; bi++) {
              S* gd = gx + (bi * c + ci) * rest;
              const S* gs = g + (bi * c + ci) * rest;
              const S* xsrc = px + (bi * c + ci) * rest;
              for (i64 i = 0; i < rest; i++) {
                S xh = (xsrc[i] - m) * istd;
                gd[i] += sc_v * istd * (gs[i] - mg - xh * mgx);
              }
            }
          } else {
            S a = sc_v * istd;
            for (i64 bi = 0; bi < b; bi++) {
              S* gd = gx + (bi * c + ci) * rest;
              const S* gs = g + (bi * c + ci) * rest;
              for (i64 i = 0; i < rest; i++) gd[i] += a * gs[i];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sparse-label cross entropy.

// Label patches ride alongside activation tensors: 0 marks unlabeled pixels.
struct LabelPatch {
  i64 b = 0, h = 0, w = 0;
  std::vector<int32_t> v;

  LabelPatch() = default;
  LabelPatch(i64 b_, i64 h_, i64 w_) : b(b_), h(h_), w(w_), v(size_t(b_ * h_ * w_), 0) {}
  i64 numel() const { return b * h * w; }
};

// Mean negative log-likelihood over labeled pixels of logits [B,K,H,W].
template <class S>
Tensor<S> masked_cross_entropy(const Tensor<S>& logits, const LabelPatch& labels) {
  const Shape& ls = logits.shape();
  check(ls.rank == 4, ErrKind::Dimension, "masked_cross_entropy expects logits [B,K,H,W], got ",
        ls.str());
  i64 b = ls[0], kcls = ls[1], h = ls[2], w = ls[3];
  check(labels.b == b && labels.h == h && labels.w == w, ErrKind::Dimension,
        "label patch ", labels.b, "x", labels.h, "x", labels.w, " does not match logits ",
        ls.str());
  i64 plane = h * w;

  const S* px = logits.data();
  std::vector<i64> pixels;
  std::vector<S> lse;
  S total = 0;
  for (i64 bi = 0; bi < b; bi++)
    for (i64 p = 0; p < plane; p++) {
      int32_t y = labels.v[size_t(bi * plane + p)];
      if (y == 0) continue;
      check(y >= 1 && i64(y) <= kcls, ErrKind::Contract, "label ", y, " outside 1..", kcls);
      const S* z = px + bi * kcls * plane + p;
      S mx = z[0];
      for (i64 k = 1; k < kcls; k++) mx = std::max(mx, z[k * plane]);
      S denom = 0;
      for (i64 k = 0; k < kcls; k++) denom += std::exp(z[k * plane] - mx);
      S l = mx + std::log(denom);
      pixels.push_back(bi * plane + p);
      lse.push_back(l);
      total += l - z[(i64(y) - 1) * plane];
    }
  check(!pixels.empty(), ErrKind::EmptySupervision,
        "masked_cross_entropy: no labeled pixels in batch");
  i64 count = i64(pixels.size());
  Tensor<S> out = Tensor<S>::alloc({1});
  out.data()[0] = total / S(count);

  if (grad_needed<S>({&logits})) {
    std::vector<int32_t> ys;
    ys.reserve(pixels.size());
    for (i64 idx : pixels) ys.push_back(labels.v[size_t(idx)]);
    out.attach({logits}, [ln = logits.handle(), pixels, lse, ys, kcls, plane,
                          count](const S* g, GradSink<S>& sink) {
      if (S* gx = sink.slot(ln.get())) {
        const S* px = ln->data.data();
        S gscale = g[0] / S(count);
        for (size_t t = 0; t < pixels.size(); t++) {
          i64 bi = pixels[t] / plane, p = pixels[t] % plane;
          const S* z = px + bi * kcls * plane + p;
          S* gz = gx + bi * kcls * plane + p;
          for (i64 k = 0; k < kcls; k++) {
            S prob = std::exp(z[k * plane] - lse[t]);
            S ind = (k == i64(ys[t]) - 1) ? S(1) : S(0);
            gz[k * plane] += gscale * (prob - ind);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace hsinas
