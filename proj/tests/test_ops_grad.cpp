#include <doctest.h>

#include "hsinas/ops.hpp"
#include "support/fd.hpp"

using namespace hsinas;
using namespace hsinas::testsupport;

TEST_CASE("conv3d sums 27 ones to a scalar 27") {
  Tensor<double> x = Tensor<double>::full({1, 1, 3, 3, 3}, 1.0);
  Tensor<double> k = Tensor<double>::full({1, 1, 3, 3, 3}, 1.0);
  Tensor<double> y = conv3d(x, k, {}, {});
  CHECK(y.shape() == Shape{1, 1, 1, 1, 1});
  CHECK(y.data()[0] == doctest::Approx(27.0));
}

TEST_CASE("conv3d identity kernel returns the input") {
  Rng rng(3);
  Tensor<double> x = Tensor<double>::alloc({2, 1, 3, 4, 5});
  fill_uniform(x, rng);
  Tensor<double> k = Tensor<double>::full({1, 1, 1, 1, 1}, 1.0);
  Tensor<double> y = conv3d(x, k, {}, {});
  for (i64 i = 0; i < x.numel(); i++) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv3d is linear in its input") {
  Rng rng(5);
  Tensor<double> x = Tensor<double>::alloc({1, 2, 4, 4, 4});
  Tensor<double> y = Tensor<double>::alloc({1, 2, 4, 4, 4});
  Tensor<double> k = Tensor<double>::alloc({3, 2, 3, 3, 3});
  fill_uniform(x, rng);
  fill_uniform(y, rng);
  fill_uniform(k, rng);
  double a = 0.7, b = -1.3;
  Tensor<double> mixed = add(scale(x, a), scale(y, b));
  Tensor<double> lhs = conv3d(mixed, k, {}, Pad3{1, 1, 1});
  Tensor<double> rhs = add(scale(conv3d(x, k, {}, Pad3{1, 1, 1}), a),
                           scale(conv3d(y, k, {}, Pad3{1, 1, 1}), b));
  for (i64 i = 0; i < lhs.numel(); i++)
    CHECK(std::abs(lhs.data()[i] - rhs.data()[i]) < 1e-10);
}

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(7);
  Tensor<double> x = Tensor<double>::alloc({1, 2, 4, 5, 5});
  Tensor<double> k = Tensor<double>::alloc({3, 2, 3, 1, 1});
  fill_uniform(x, rng);
  fill_uniform(k, rng);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  auto build = [&]() { return sum_all(conv3d(x, k, {}, Pad3{1, 0, 0})); };
  CHECK(fd_check(x, build, rng, 10).max_rel_err < 1e-4);
  CHECK(fd_check(k, build, rng, 10).max_rel_err < 1e-4);
}

TEST_CASE("conv3d with stride and padding matches finite differences") {
  Rng rng(9);
  Tensor<double> x = Tensor<double>::alloc({2, 1, 9, 6, 6});
  Tensor<double> k = Tensor<double>::alloc({4, 1, 5, 3, 3});
  fill_uniform(x, rng);
  fill_uniform(k, rng);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  auto build = [&]() {
    return sum_all(conv3d(x, k, Stride3{2, 1, 1}, Pad3{2, 1, 1}));
  };
  CHECK(fd_check(x, build, rng, 10).max_rel_err < 1e-4);
  CHECK(fd_check(k, build, rng, 10).max_rel_err < 1e-4);
}

TEST_CASE("conv3d rejects channel mismatch naming the axis") {
  Tensor<double> x = Tensor<double>::alloc({1, 2, 3, 3, 3});
  Tensor<double> k = Tensor<double>::alloc({1, 3, 1, 1, 1});
  CHECK_THROWS_WITH_AS(conv3d(x, k, {}, {}), doctest::Contains("channel"), Error);
}

TEST_CASE("conv3d rejects kernels larger than the padded input") {
  Tensor<double> x = Tensor<double>::alloc({1, 1, 2, 3, 3});
  Tensor<double> k = Tensor<double>::alloc({1, 1, 3, 3, 3});
  CHECK_THROWS_WITH_AS(conv3d(x, k, {}, {}), doctest::Contains("bands"), Error);
}

TEST_CASE("single-channel separable equals conv3d with the product kernel") {
  Rng rng(11);
  Tensor<double> x = Tensor<double>::alloc({1, 1, 4, 6, 6});
  Tensor<double> dw = Tensor<double>::alloc({1, 1, 3, 3});
  fill_uniform(x, rng);
  fill_uniform(dw, rng);
  double pwv = rng.uniform(-1, 1);
  Tensor<double> pw = Tensor<double>::full({1, 1, 1, 1, 1}, pwv);

  Tensor<double> lhs = separable_conv3d(x, dw, pw, {}, Pad3{0, 1, 1});
  Tensor<double> prod = Tensor<double>::alloc({1, 1, 1, 3, 3});
  for (i64 i = 0; i < 9; i++) prod.data()[i] = dw.data()[i] * pwv;
  Tensor<double> rhs = conv3d(x, prod, {}, Pad3{0, 1, 1});
  for (i64 i = 0; i < lhs.numel(); i++)
    CHECK(lhs.data()[i] == doctest::Approx(rhs.data()[i]).epsilon(1e-12));
}

TEST_CASE("separable parameter count example: Sep(1x3x3) at 8 channels is 136") {
  Tensor<double> dw = Tensor<double>::alloc({8, 1, 3, 3});
  Tensor<double> pw = Tensor<double>::alloc({8, 8, 1, 1, 1});
  CHECK(dw.numel() + pw.numel() == 136);
}

TEST_CASE("separable gradients match finite differences") {
  Rng rng(13);
  Tensor<double> x = Tensor<double>::alloc({1, 3, 4, 5, 5});
  Tensor<double> dw = Tensor<double>::alloc({3, 1, 3, 3});
  Tensor<double> pw = Tensor<double>::alloc({2, 3, 1, 1, 1});
  fill_uniform(x, rng);
  fill_uniform(dw, rng);
  fill_uniform(pw, rng);
  x.set_requires_grad(true);
  dw.set_requires_grad(true);
  pw.set_requires_grad(true);
  auto build = [&]() { return sum_all(separable_conv3d(x, dw, pw, {}, Pad3{0, 1, 1})); };
  CHECK(fd_check(x, build, rng, 8).max_rel_err < 1e-4);
  CHECK(fd_check(dw, build, rng, 8).max_rel_err < 1e-4);
  CHECK(fd_check(pw, build, rng, 8).max_rel_err < 1e-4);
}

TEST_CASE("depthwise gradients match finite differences under stride") {
  Rng rng(15);
  Tensor<double> x = Tensor<double>::alloc({2, 2, 8, 5, 5});
  Tensor<double> k = Tensor<double>::alloc({2, 5, 3, 3});
  fill_uniform(x, rng);
  fill_uniform(k, rng);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  auto build = [&]() { return sum_all(depthwise_conv3d(x, k, Stride3{2, 1, 1}, Pad3{2, 1, 1})); };
  CHECK(fd_check(x, build, rng, 8).max_rel_err < 1e-4);
  CHECK(fd_check(k, build, rng, 8).max_rel_err < 1e-4);
}

TEST_CASE("conv2d: all-ones 3x3 kernel sums 9 ones") {
  Tensor<double> x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> k = Tensor<double>::full({1, 1, 3, 3}, 1.0);
  Tensor<double> y = conv2d(x, k, 1, 1, 0, 0);
  CHECK(y.numel() == 1);
  CHECK(y.data()[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d identity kernel and finite differences") {
  Rng rng(17);
  Tensor<double> x = Tensor<double>::alloc({2, 3, 6, 6});
  Tensor<double> k = Tensor<double>::alloc({4, 3, 3, 3});
  fill_uniform(x, rng);
  fill_uniform(k, rng);

  Tensor<double> id = Tensor<double>::zeros({3, 3, 1, 1});
  id.data()[0 * 3 + 0] = 1.0;
  id.data()[1 * 3 + 1] = 1.0;
  id.data()[2 * 3 + 2] = 1.0;
  Tensor<double> same = conv2d(x, id, 1, 1, 0, 0);
  for (i64 i = 0; i < x.numel(); i++) CHECK(same.data()[i] == doctest::Approx(x.data()[i]));

  x.set_requires_grad(true);
  k.set_requires_grad(true);
  auto build = [&]() { return sum_all(conv2d(x, k, 1, 1, 1, 1)); };
  CHECK(fd_check(x, build, rng, 8).max_rel_err < 1e-4);
  CHECK(fd_check(k, build, rng, 8).max_rel_err < 1e-4);
}

TEST_CASE("leaky_relu values and gradient") {
  Tensor<double> x = Tensor<double>::from({4}, {2.0, -1.0, 3.0, -3.0});
  x.set_requires_grad(true);
  Tensor<double> y = leaky_relu(x, 0.2);
  CHECK(y.data()[0] == doctest::Approx(2.0));
  CHECK(y.data()[1] == doctest::Approx(-0.2));
  backward(sum_all(y));
  CHECK(x.grad()[2] == doctest::Approx(1.0));
  CHECK(x.grad()[3] == doctest::Approx(0.2));
}

TEST_CASE("leaky_relu rejects slopes outside (0,1)") {
  Tensor<double> x = Tensor<double>::full({2}, 1.0);
  CHECK_THROWS_AS(leaky_relu(x, 1.5), Error);
}

TEST_CASE("softmax basics") {
  Tensor<double> u = Tensor<double>::zeros({8});
  Tensor<double> su = softmax(u, 0);
  for (i64 i = 0; i < 8; i++) CHECK(su.data()[i] == doctest::Approx(0.125));

  Tensor<double> two = Tensor<double>::from({2}, {0.0, std::log(3.0)});
  Tensor<double> st = softmax(two, 0);
  CHECK(st.data()[0] == doctest::Approx(0.25));
  CHECK(st.data()[1] == doctest::Approx(0.75));
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
  Rng rng(19);
  Tensor<double> x = Tensor<double>::alloc({3, 5, 4});
  fill_uniform(x, rng, -3, 3);
  Tensor<double> y = softmax(x, 1);
  for (i64 o = 0; o < 3; o++)
    for (i64 in = 0; in < 4; in++) {
      double s = 0;
      for (i64 j = 0; j < 5; j++) s += y.data()[(o * 5 + j) * 4 + in];
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  Tensor<double> shifted = Tensor<double>::alloc({3, 5, 4});
  for (i64 i = 0; i < x.numel(); i++) shifted.data()[i] = x.data()[i] + 11.25;
  Tensor<double> ys = softmax(shifted, 1);
  for (i64 i = 0; i < y.numel(); i++)
    CHECK(y.data()[i] == doctest::Approx(ys.data()[i]).epsilon(1e-12));
}

TEST_CASE("softmax gradient matches finite differences") {
  Rng rng(21);
  Tensor<double> x = Tensor<double>::alloc({2, 6, 3});
  fill_uniform(x, rng, -2, 2);
  x.set_requires_grad(true);
  Tensor<double> coeff = Tensor<double>::alloc({2, 6, 3});
  fill_uniform(coeff, rng);
  auto build = [&]() { return sum_all(mul(softmax(x, 1), coeff)); };
  CHECK(fd_check(x, build, rng, 12).max_rel_err < 1e-4);
}

TEST_CASE("spectral_avg reduces bands and matches brute force") {
  Rng rng(23);
  Tensor<double> x = Tensor<double>::alloc({2, 3, 4, 3, 5});
  fill_uniform(x, rng);
  Tensor<double> y = spectral_avg(x);
  CHECK(y.shape() == Shape{2, 3, 3, 5});
  for (i64 b = 0; b < 2; b++)
    for (i64 c = 0; c < 3; c++)
      for (i64 p = 0; p < 15; p++) {
        double m = 0;
        for (i64 d = 0; d < 4; d++) m += x.data()[((b * 3 + c) * 4 + d) * 15 + p];
        CHECK(y.data()[(b * 3 + c) * 15 + p] == doctest::Approx(m / 4.0));
      }

  Tensor<double> one = Tensor<double>::alloc({1, 2, 1, 3, 3});
  fill_uniform(one, rng);
  Tensor<double> sq = spectral_avg(one);
  for (i64 i = 0; i < sq.numel(); i++) CHECK(sq.data()[i] == doctest::Approx(one.data()[i]));

  x.set_requires_grad(true);
  auto build = [&]() { return sum_all(mul(spectral_avg(x), spectral_avg(x))); };
  CHECK(fd_check(x, build, rng, 8).max_rel_err < 1e-4);
}

TEST_CASE("batch_norm constant channel lands on the shift value") {
  Tensor<double> x = Tensor<double>::full({2, 3, 2, 2, 2}, 4.2);
  Tensor<double> sc = Tensor<double>::full({3}, 1.7);
  Tensor<double> sh = Tensor<double>::from({3}, {0.5, -1.0, 2.0});
  RunningStats<double> rs(3);
  Tensor<double> y = batch_norm(x, sc, sh, rs, true);
  for (i64 b = 0; b < 2; b++)
    for (i64 c = 0; c < 3; c++)
      for (i64 i = 0; i < 8; i++)
        CHECK(y.data()[(b * 3 + c) * 8 + i] == doctest::Approx(sh.data()[c]));
}

TEST_CASE("batch_norm is near-identity on standardized input") {
  Rng rng(25);
  Tensor<double> x = Tensor<double>::alloc({4, 1, 2, 8, 8});
  fill_uniform(x, rng, -2, 2);
  double m = 0;
  for (i64 i = 0; i < x.numel(); i++) m += x.data()[i];
  m /= double(x.numel());
  double v = 0;
  for (i64 i = 0; i < x.numel(); i++) v += (x.data()[i] - m) * (x.data()[i] - m);
  v /= double(x.numel());
  for (i64 i = 0; i < x.numel(); i++) x.data()[i] = (x.data()[i] - m) / std::sqrt(v);

  Tensor<double> sc = Tensor<double>::full({1}, 1.0);
  Tensor<double> sh = Tensor<double>::zeros({1});
  RunningStats<double> rs(1);
  Tensor<double> y = batch_norm(x, sc, sh, rs, true);
  for (i64 i = 0; i < x.numel(); i++)
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-4));
}

TEST_CASE("batch_norm train gradients match finite differences") {
  Rng rng(27);
  Tensor<double> x = Tensor<double>::alloc({3, 2, 2, 3, 3});
  Tensor<double> sc = Tensor<double>::alloc({2});
  Tensor<double> sh = Tensor<double>::alloc({2});
  fill_uniform(x, rng);
  fill_uniform(sc, rng, 0.5, 1.5);
  fill_uniform(sh, rng);
  x.set_requires_grad(true);
  sc.set_requires_grad(true);
  sh.set_requires_grad(true);
  Tensor<double> coeff = Tensor<double>::alloc({3, 2, 2, 3, 3});
  fill_uniform(coeff, rng);
  auto build = [&]() {
    RunningStats<double> rs(2);
    return sum_all(mul(batch_norm(x, sc, sh, rs, true), coeff));
  };
  CHECK(fd_check(x, build, rng, 10).max_rel_err < 1e-4);
  CHECK(fd_check(sc, build, rng, 4).max_rel_err < 1e-4);
  CHECK(fd_check(sh, build, rng, 4).max_rel_err < 1e-4);
}

TEST_CASE("batch_norm eval mode is bit-deterministic and batch-independent") {
  Rng rng(29);
  Tensor<double> sc = Tensor<double>::alloc({2});
  Tensor<double> sh = Tensor<double>::alloc({2});
  fill_uniform(sc, rng, 0.5, 1.5);
  fill_uniform(sh, rng);
  RunningStats<double> rs(2);
  rs.mean = {0.3, -0.2};
  rs.var = {1.4, 0.6};

  Tensor<double> x = Tensor<double>::alloc({2, 2, 2, 2, 2});
  fill_uniform(x, rng);
  Tensor<double> y1 = batch_norm(x, sc, sh, rs, false);
  Tensor<double> y2 = batch_norm(x, sc, sh, rs, false);
  for (i64 i = 0; i < y1.numel(); i++) CHECK(y1.data()[i] == y2.data()[i]);

  // Same sample alone vs inside the batch: eval mode must agree exactly.
  Tensor<double> solo = Tensor<double>::alloc({1, 2, 2, 2, 2});
  std::memcpy(solo.data(), x.data(), size_t(solo.numel()) * sizeof(double));
  Tensor<double> ys = batch_norm(solo, sc, sh, rs, false);
  for (i64 i = 0; i < ys.numel(); i++) CHECK(ys.data()[i] == y1.data()[i]);
}

TEST_CASE("masked cross entropy on uniform logits is ln K") {
  Tensor<double> logits = Tensor<double>::zeros({1, 4, 2, 2});
  LabelPatch labels(1, 2, 2);
  labels.v = {1, 0, 3, 0};
  Tensor<double> loss = masked_cross_entropy(logits, labels);
  CHECK(loss.item() == doctest::Approx(std::log(4.0)));
}

TEST_CASE("masked cross entropy ignores unlabeled pixels exactly") {
  Rng rng(31);
  Tensor<double> logits = Tensor<double>::alloc({1, 3, 4, 4});
  fill_uniform(logits, rng, -2, 2);
  LabelPatch labels(1, 4, 4);
  labels.v[5] = 2;
  labels.v[9] = 1;
  labels.v[12] = 3;
  double base = masked_cross_entropy(logits, labels).item();

  for (i64 p = 0; p < 16; p++) {
    if (p == 5 || p == 9 || p == 12) continue;
    for (i64 k = 0; k < 3; k++) logits.data()[k * 16 + p] += rng.uniform(-5, 5);
  }
  double after = masked_cross_entropy(logits, labels).item();
  CHECK(after == base);
}

TEST_CASE("masked cross entropy equals the per-pixel brute force mean") {
  Rng rng(33);
  Tensor<double> logits = Tensor<double>::alloc({2, 3, 2, 4});
  fill_uniform(logits, rng, -2, 2);
  LabelPatch labels(2, 2, 4);
  labels.v = {0, 1, 0, 2, 3, 0, 0, 0, 2, 0, 0, 0, 0, 0, 1, 3};

  double expect = 0;
  int count = 0;
  for (i64 b = 0; b < 2; b++)
    for (i64 p = 0; p < 8; p++) {
      int32_t y = labels.v[size_t(b * 8 + p)];
      if (y == 0) continue;
      double mx = -1e300;
      for (i64 k = 0; k < 3; k++) mx = std::max(mx, logits.data()[(b * 3 + k) * 8 + p]);
      double denom = 0;
      for (i64 k = 0; k < 3; k++) denom += std::exp(logits.data()[(b * 3 + k) * 8 + p] - mx);
      expect += mx + std::log(denom) - logits.data()[(b * 3 + (y - 1)) * 8 + p];
      count++;
    }
  expect /= count;
  CHECK(masked_cross_entropy(logits, labels).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("masked cross entropy with confident correct logits tends to zero") {
  Tensor<double> logits = Tensor<double>::zeros({1, 2, 1, 2});
  logits.data()[0 * 2 + 0] = 30.0;
  logits.data()[1 * 2 + 1] = 30.0;
  LabelPatch labels(1, 1, 2);
  labels.v = {1, 2};
  CHECK(masked_cross_entropy(logits, labels).item() < 1e-9);
}

TEST_CASE("masked cross entropy rejects an all-unlabeled batch") {
  Tensor<double> logits = Tensor<double>::zeros({1, 2, 2, 2});
  LabelPatch labels(1, 2, 2);
  try {
    masked_cross_entropy(logits, labels);
    FAIL("expected empty-supervision error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::EmptySupervision);
  }
}

TEST_CASE("masked cross entropy gradient matches finite differences") {
  Rng rng(35);
  Tensor<double> logits = Tensor<double>::alloc({2, 4, 3, 3});
  fill_uniform(logits, rng, -1, 1);
  logits.set_requires_grad(true);
  LabelPatch labels(2, 3, 3);
  for (i64 i = 0; i < labels.numel(); i++)
    labels.v[size_t(i)] = int32_t(rng.below(5));  // includes unlabeled zeros
  labels.v[0] = 1;
  auto build = [&]() { return masked_cross_entropy(logits, labels); };
  CHECK(fd_check(logits, build, rng, 16).max_rel_err < 1e-4);
}

TEST_CASE("weighted_sum mixes terms and routes gradients to slots") {
  Rng rng(37);
  std::vector<Tensor<double>> xs;
  for (int i = 0; i < 3; i++) {
    Tensor<double> t = Tensor<double>::alloc({2, 3});
    fill_uniform(t, rng);
    t.set_requires_grad(true);
    xs.push_back(t);
  }
  Tensor<double> w = Tensor<double>::from({5}, {0.3, -0.7, 0.0, 1.1, 2.0});
  w.set_requires_grad(true);
  std::vector<int> slot{0, 3, 4};

  Tensor<double> y = weighted_sum(xs, w, slot);
  for (i64 i = 0; i < y.numel(); i++) {
    double expect = 0.3 * xs[0].data()[i] + 1.1 * xs[1].data()[i] + 2.0 * xs[2].data()[i];
    CHECK(y.data()[i] == doctest::Approx(expect));
  }

  auto build = [&]() { return sum_all(mul(weighted_sum(xs, w, slot), weighted_sum(xs, w, slot))); };
  CHECK(fd_check(w, build, rng, 5).max_rel_err < 1e-4);
  CHECK(fd_check(xs[1], build, rng, 4).max_rel_err < 1e-4);

  // Unused slots get exactly zero gradient.
  backward(build());
  CHECK(w.grad()[1] == 0.0);
  CHECK(w.grad()[2] == 0.0);
}

TEST_CASE("concat_channels stacks blocks and splits gradients back") {
  Rng rng(39);
  Tensor<double> a = Tensor<double>::alloc({2, 2, 3});
  Tensor<double> b = Tensor<double>::alloc({2, 3, 3});
  fill_uniform(a, rng);
  fill_uniform(b, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tensor<double> y = concat_channels<double>({a, b});
  CHECK(y.shape() == Shape{2, 5, 3});
  for (i64 bi = 0; bi < 2; bi++) {
    for (i64 i = 0; i < 6; i++) CHECK(y.data()[bi * 15 + i] == a.data()[bi * 6 + i]);
    for (i64 i = 0; i < 9; i++) CHECK(y.data()[bi * 15 + 6 + i] == b.data()[bi * 9 + i]);
  }
  auto build = [&]() {
    Tensor<double> c = concat_channels<double>({a, b});
    return sum_all(mul(c, c));
  };
  CHECK(fd_check(a, build, rng, 6).max_rel_err < 1e-4);
  CHECK(fd_check(b, build, rng, 6).max_rel_err < 1e-4);
}
