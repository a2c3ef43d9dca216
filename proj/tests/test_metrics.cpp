#include <doctest.h>

#include "hsinas/metrics.hpp"
#include "support/fd.hpp"

using namespace hsinas;

namespace {

ConfusionMatrix from_rows(const std::vector<std::vector<i64>>& rows) {
  ConfusionMatrix cm(int(rows.size()));
  for (int i = 0; i < int(rows.size()); i++)
    for (int j = 0; j < int(rows.size()); j++) cm.at(i, j) = rows[size_t(i)][size_t(j)];
  return cm;
}

// Straight-from-definition scorer over raw pixel pairs: recals per class,
// plain agreement counts, chance agreement from marginals.
struct HandScore {
  double oa, aa, kappa;
};

HandScore brute_force_score(const LabelMap& ref, const ClassMap& pred, int k) {
  i64 agree = 0, total = 0;
  std::vector<i64> ref_count(size_t(k), 0), pred_count(size_t(k), 0), hit(size_t(k), 0);
  for (size_t i = 0; i < ref.labels.size(); i++) {
    if (ref.labels[i] == 0) continue;
    total++;
    ref_count[size_t(ref.labels[i] - 1)]++;
    pred_count[size_t(pred.labels[i] - 1)]++;
    if (ref.labels[i] == pred.labels[i]) {
      agree++;
      hit[size_t(ref.labels[i] - 1)]++;
    }
  }
  HandScore s{};
  s.oa = double(agree) / double(total);
  double recall_sum = 0;
  int present = 0;
  for (int c = 0; c < k; c++) {
    if (ref_count[size_t(c)] == 0) continue;
    recall_sum += double(hit[size_t(c)]) / double(ref_count[size_t(c)]);
    present++;
  }
  s.aa = recall_sum / present;
  double pe = 0;
  for (int c = 0; c < k; c++) pe += double(ref_count[size_t(c)]) * double(pred_count[size_t(c)]);
  pe /= double(total) * double(total);
  s.kappa = (s.oa - pe) / (1 - pe);
  return s;
}

}  // namespace

TEST_CASE("hand-computed matrices score exactly") {
  struct Case {
    std::vector<std::vector<i64>> rows;
    double oa, aa, kappa;
  };
  const double third = 1.0 / 3.0;
  std::vector<Case> cases = {
      // Perfect diagonal.
      {{{3, 0}, {0, 3}}, 1.0, 1.0, 1.0},
      // The published worked example.
      {{{2, 1}, {1, 2}}, 2.0 / 3.0, 2.0 / 3.0, third},
      // Everything predicted class 1, balanced references: chance-level kappa.
      {{{5, 0}, {5, 0}}, 0.5, 0.5, 0.0},
      // Single class, all correct.
      {{{4}}, 1.0, 1.0, 1.0},
      // Three classes; recalls 4/5, 1, 1/2; marginals rows (5,3,4) x cols (4,6,2).
      {{{4, 1, 0}, {0, 3, 0}, {0, 2, 2}},
       9.0 / 12.0,
       (4.0 / 5.0 + 1.0 + 2.0 / 4.0) / 3.0,
       (9.0 / 12.0 - (5.0 * 4.0 + 3.0 * 6.0 + 4.0 * 2.0) / 144.0) /
           (1.0 - (5.0 * 4.0 + 3.0 * 6.0 + 4.0 * 2.0) / 144.0)},
      // Fully wrong two-class matrix: kappa goes negative.
      {{{0, 4}, {4, 0}}, 0.0, 0.0, -1.0},
      // Skewed marginals.
      {{{8, 2}, {1, 9}}, 17.0 / 20.0, (0.8 + 0.9) / 2.0,
       (0.85 - (10.0 * 9.0 + 10.0 * 11.0) / 400.0) / (1.0 - (10.0 * 9.0 + 10.0 * 11.0) / 400.0)},
      // Absent reference class excluded from AA.
      {{{3, 0, 1}, {0, 0, 0}, {0, 0, 4}}, 7.0 / 8.0, (0.75 + 1.0) / 2.0,
       (7.0 / 8.0 - (4.0 * 3.0 + 0.0 + 4.0 * 5.0) / 64.0) /
           (1.0 - (4.0 * 3.0 + 0.0 + 4.0 * 5.0) / 64.0)},
      // Larger diagonal-dominant 4-class case.
      {{{10, 1, 0, 0}, {0, 12, 0, 0}, {2, 0, 8, 0}, {0, 0, 1, 6}},
       36.0 / 40.0,
       (10.0 / 11.0 + 1.0 + 0.8 + 6.0 / 7.0) / 4.0,
       (0.9 - (11.0 * 12.0 + 12.0 * 13.0 + 10.0 * 9.0 + 7.0 * 6.0) / 1600.0) /
           (1.0 - (11.0 * 12.0 + 12.0 * 13.0 + 10.0 * 9.0 + 7.0 * 6.0) / 1600.0)},
      // One pixel only.
      {{{1, 0}, {0, 0}}, 1.0, 1.0, 1.0},
      // Uniform scatter: po equals pe exactly.
      {{{1, 1}, {1, 1}}, 0.5, 0.5, 0.0},
  };
  for (const auto& c : cases) {
    ConfusionMatrix cm = from_rows(c.rows);
    CAPTURE(&c - cases.data());
    CHECK(oa(cm) == doctest::Approx(c.oa).epsilon(1e-12));
    CHECK(aa(cm) == doctest::Approx(c.aa).epsilon(1e-12));
    CHECK(kappa(cm) == doctest::Approx(c.kappa).epsilon(1e-12));
  }
}

TEST_CASE("degenerate single-class chance agreement") {
  // pe reaches 1 only when all reference and all predicted mass sit on one
  // class, which forces po = 1 as well; kappa is pinned to 1 there instead of
  // dividing zero by zero.
  ConfusionMatrix perfect = from_rows({{5}});
  CHECK(kappa(perfect) == 1.0);

  ConfusionMatrix conc(2);
  conc.at(1, 1) = 3;
  CHECK(kappa(conc) == 1.0);
}

TEST_CASE("empty matrix is an undefined-metric error") {
  ConfusionMatrix cm(3);
  CHECK_THROWS_AS(oa(cm), Error);
  CHECK_THROWS_AS(aa(cm), Error);
  CHECK_THROWS_AS(kappa(cm), Error);
  try {
    oa(cm);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::UndefinedMetric);
  }
}

TEST_CASE("accumulate builds the matrix pixel by pixel") {
  LabelMap ref;
  ref.height = 2;
  ref.width = 3;
  ref.labels = {1, 0, 2, 2, 1, 0};
  ClassMap pred = ref;
  pred.labels = {1, 2, 2, 1, 1, 2};

  ConfusionMatrix cm(2);
  accumulate(cm, ref, pred);
  CHECK(cm.total() == 4);  // two unlabeled pixels skipped
  CHECK(cm.at(0, 0) == 2);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.at(1, 0) == 1);
  CHECK(cm.at(0, 1) == 0);
}

TEST_CASE("identical maps give a diagonal matrix, one flip moves one count") {
  Rng rng(61);
  LabelMap ref;
  ref.height = 8;
  ref.width = 8;
  ref.labels.resize(64);
  for (auto& v : ref.labels) v = uint16_t(1 + rng.below(3));
  ClassMap pred = ref;

  ConfusionMatrix cm(3);
  accumulate(cm, ref, pred);
  for (int i = 0; i < 3; i++)
    for (int j = 0; j < 3; j++)
      if (i != j) CHECK(cm.at(i, j) == 0);
  CHECK(oa(cm) == 1.0);

  pred.labels[10] = uint16_t(pred.labels[10] == 1 ? 2 : 1);
  ConfusionMatrix cm2(3);
  accumulate(cm2, ref, pred);
  i64 off = 0;
  for (int i = 0; i < 3; i++)
    for (int j = 0; j < 3; j++)
      if (i != j) off += cm2.at(i, j);
  CHECK(off == 1);
}

TEST_CASE("random maps agree with the per-pixel brute-force scorer") {
  Rng rng(63);
  for (int round = 0; round < 12; round++) {
    const int k = 2 + int(rng.below(5));
    LabelMap ref;
    ref.height = 16;
    ref.width = 16;
    ref.labels.resize(256);
    ClassMap pred = ref;
    pred.labels.resize(256);
    for (size_t i = 0; i < 256; i++) {
      ref.labels[i] = uint16_t(rng.below(uint64_t(k) + 1));  // 0 = unlabeled
      pred.labels[i] = uint16_t(1 + rng.below(uint64_t(k)));
    }
    if (ref.labeled_count() == 0) ref.labels[0] = 1;

    ConfusionMatrix cm(k);
    accumulate(cm, ref, pred);
    HandScore hs = brute_force_score(ref, pred, k);
    CHECK(oa(cm) == doctest::Approx(hs.oa).epsilon(1e-12));
    CHECK(aa(cm) == doctest::Approx(hs.aa).epsilon(1e-12));
    CHECK(kappa(cm) == doctest::Approx(hs.kappa).epsilon(1e-12));
  }
}

TEST_CASE("class relabeling leaves all three metrics unchanged") {
  Rng rng(65);
  ConfusionMatrix cm = from_rows({{5, 2, 1}, {0, 7, 3}, {2, 2, 9}});
  const int perm[3] = {2, 0, 1};
  ConfusionMatrix permuted(3);
  for (int i = 0; i < 3; i++)
    for (int j = 0; j < 3; j++) permuted.at(perm[i], perm[j]) = cm.at(i, j);
  CHECK(oa(permuted) == doctest::Approx(oa(cm)).epsilon(1e-12));
  CHECK(aa(permuted) == doctest::Approx(aa(cm)).epsilon(1e-12));
  CHECK(kappa(permuted) == doctest::Approx(kappa(cm)).epsilon(1e-12));
}

TEST_CASE("kappa is 1 exactly when the matrix is diagonal with positive trace") {
  ConfusionMatrix diag = from_rows({{4, 0}, {0, 9}});
  CHECK(kappa(diag) == doctest::Approx(1.0).epsilon(1e-12));
  ConfusionMatrix near = from_rows({{4, 1}, {0, 9}});
  CHECK(kappa(near) < 1.0);
}

TEST_CASE("partial matrices merge exactly") {
  Rng rng(67);
  ConfusionMatrix a(4), b(4), whole(4);
  LabelMap ref;
  ref.height = 4;
  ref.width = 8;
  ref.labels.resize(32);
  ClassMap pred = ref;
  pred.labels.resize(32);
  for (size_t i = 0; i < 32; i++) {
    ref.labels[i] = uint16_t(rng.below(5));
    pred.labels[i] = uint16_t(1 + rng.below(4));
  }
  LabelMap ref_top = ref, ref_bot = ref;
  for (size_t i = 16; i < 32; i++) ref_top.labels[i] = 0;
  for (size_t i = 0; i < 16; i++) ref_bot.labels[i] = 0;
  accumulate(a, ref_top, pred);
  accumulate(b, ref_bot, pred);
  accumulate(whole, ref, pred);
  a += b;
  for (int i = 0; i < 4; i++)
    for (int j = 0; j < 4; j++) CHECK(a.at(i, j) == whole.at(i, j));
}

TEST_CASE("out-of-range predictions at labeled pixels are rejected") {
  LabelMap ref;
  ref.height = 1;
  ref.width = 2;
  ref.labels = {1, 1};
  ClassMap pred = ref;
  pred.labels = {1, 0};
  ConfusionMatrix cm(2);
  CHECK_THROWS_AS(accumulate(cm, ref, pred), Error);
}

TEST_CASE("percent formatting matches table style") {
  CHECK(format_percent(0.9653) == "96.53");
  CHECK(format_percent(1.0) == "100.00");
  CHECK(format_percent(1.0 / 3.0) == "33.33");
}
