#include <doctest.h>

#include <cmath>

#include "hsinas/compact.hpp"
#include "hsinas/genotype.hpp"

using namespace hsinas;

namespace {

int edge_rows(int nodes) {
  int e = 0;
  for (int i = 0; i < nodes; i++) e += i + 2;
  return e;
}

std::vector<std::vector<double>> uniform_rows(int nodes) {
  return std::vector<std::vector<double>>(size_t(edge_rows(nodes)), std::vector<double>(8, 0.0));
}

// Logits whose softmax equals the given weights (they must sum to 1).
std::vector<double> logits_for(const std::vector<double>& weights) {
  std::vector<double> out;
  for (double w : weights) out.push_back(std::log(w));
  return out;
}

std::vector<std::vector<double>> random_rows(int nodes, Rng& rng) {
  auto rows = uniform_rows(nodes);
  for (auto& row : rows)
    for (double& v : row) v = rng.uniform(-2.0, 2.0);
  return rows;
}

WidthTrellis random_trellis(int layers, Rng& rng) {
  WidthTrellis t;
  for (int l = 0; l < layers; l++) {
    std::vector<double> row(l == 0 ? 2 : 3);
    double sum = 0;
    for (double& v : row) {
      v = rng.uniform(0.05, 1.0);
      sum += v;
    }
    for (double& v : row) v /= sum;
    t.prob.push_back(row);
  }
  return t;
}

Genotype hand_genotype() {
  Genotype g;
  g.space = SpaceId::asym_d;
  g.layers = 2;
  g.nodes = 3;
  g.base_width = 16;
  g.width_index = {1, 2};
  g.cells = {
      {{{{0, "con_3-3"}, {1, "sep_5-3"}}},
       {{{0, "con_3-5"}, {2, "skip_connection"}}},
       {{{1, "con_5-3"}, {3, "sep_3-3"}}}},
      {{{{0, "sep_3-5"}, {1, "con_3-3"}}},
       {{{1, "skip_connection"}, {2, "con_5-3"}}},
       {{{2, "sep_3-3"}, {3, "con_3-3"}}}},
  };
  return g;
}

}  // namespace

TEST_CASE("one-hot skip rows pin both retention and the op choice") {
  const int nodes = 3;
  auto rows = uniform_rows(nodes);
  // Per node, boost skip on two chosen edges: sources {0, i+1}.
  int base = 0;
  for (int i = 0; i < nodes; i++) {
    rows[size_t(base + 0)][6] = 50.0;
    rows[size_t(base + i + 1)][6] = 50.0;
    base += i + 2;
  }
  auto cells = derive_layer_cells(SpaceId::asym_d, rows, nodes);
  REQUIRE(cells.size() == 3);
  for (int i = 0; i < nodes; i++) {
    CHECK(cells[size_t(i)][0].source == 0);
    CHECK(cells[size_t(i)][0].op == "skip_connection");
    CHECK(cells[size_t(i)][1].source == i + 1);
    CHECK(cells[size_t(i)][1].op == "skip_connection");
  }
}

TEST_CASE("retention matches an exhaustive ranking oracle") {
  Rng rng(61);
  const auto& ops = space_ops(SpaceId::sym_ud);
  for (int trial = 0; trial < 60; trial++) {
    const int nodes = 1 + int(rng.below(3));
    auto rows = random_rows(nodes, rng);
    auto cells = derive_layer_cells(SpaceId::sym_ud, rows, nodes);

    int base = 0;
    for (int i = 0; i < nodes; i++) {
      struct Entry {
        int src;
        double strength;
        std::string op;
      };
      std::vector<Entry> entries;
      for (int src = 0; src < i + 2; src++) {
        const auto& row = rows[size_t(base + src)];
        double peak = *std::max_element(row.begin(), row.end());
        double denom = 0;
        for (double v : row) denom += std::exp(v - peak);
        double best = -1;
        std::string op;
        for (size_t k = 0; k < ops.size(); k++) {
          if (ops[k].family == ConvFamily::discard) continue;
          double w = std::exp(row[k] - peak) / denom;
          if (w > best) {
            best = w;
            op = ops[k].name;
          }
        }
        entries.push_back({src, best, op});
      }
      // Exhaustive pair ranking: the retained pair beats every other pair.
      std::vector<Entry> sorted = entries;
      std::stable_sort(sorted.begin(), sorted.end(),
                       [](const Entry& a, const Entry& b) { return a.strength > b.strength; });
      int lo = std::min(sorted[0].src, sorted[1].src);
      int hi = std::max(sorted[0].src, sorted[1].src);
      CHECK(cells[size_t(i)][0].source == lo);
      CHECK(cells[size_t(i)][1].source == hi);
      for (const Entry& e : entries) {
        if (e.src == cells[size_t(i)][0].source) CHECK(cells[size_t(i)][0].op == e.op);
        if (e.src == cells[size_t(i)][1].source) CHECK(cells[size_t(i)][1].op == e.op);
      }
      base += i + 2;
    }
  }
}

TEST_CASE("discard mass never makes an edge strong") {
  const int nodes = 2;
  auto rows = uniform_rows(nodes);
  // Node 1 (rows 2..4). Source 0: dominant discard but a 0.009 skip.
  rows[2] = logits_for({0.0002, 0.0002, 0.0002, 0.0002, 0.0001, 0.0001, 0.009, 0.99});
  // Source 1: best non-discard weight only 0.005.
  rows[3] = logits_for({0.005, 0.0008, 0.0008, 0.0008, 0.0008, 0.0008, 0.001, 0.99});
  // Source 2: clearly strong conv.
  rows[4] = logits_for({0.5, 0.08, 0.08, 0.08, 0.08, 0.08, 0.05, 0.05});

  auto cells = derive_layer_cells(SpaceId::asym_d, rows, nodes);
  CHECK(cells[1][0].source == 0);
  CHECK(cells[1][0].op == "skip_connection");
  CHECK(cells[1][1].source == 2);
  CHECK(cells[1][1].op == "con_3-3");
}

TEST_CASE("ties prefer the lower source and the earlier op") {
  const int nodes = 2;
  auto rows = uniform_rows(nodes);
  // Node 1: sources 0 and 1 share identical rows; source 2 is weaker.
  rows[2][0] = 3.0;
  rows[3][0] = 3.0;
  rows[4][5] = 1.0;
  auto cells = derive_layer_cells(SpaceId::asym_d, rows, nodes);
  CHECK(cells[1][0].source == 0);
  CHECK(cells[1][1].source == 1);

  // A fully uniform row has all ops tied; the first listed op wins.
  auto flat = uniform_rows(1);
  auto one = derive_layer_cells(SpaceId::asym_d, flat, 1);
  CHECK(one[0][0].op == space_ops(SpaceId::asym_d)[0].name);
  CHECK(one[0][1].op == space_ops(SpaceId::asym_d)[0].name);
}

TEST_CASE("derived genotypes are valid and the width path is legal") {
  Rng rng(62);
  for (int trial = 0; trial < 100; trial++) {
    std::vector<std::vector<std::vector<double>>> alpha;
    alpha.push_back(random_rows(3, rng));
    alpha.push_back(random_rows(3, rng));
    Genotype g = derive_genotype(SpaceId::asym_d, alpha, random_trellis(2, rng), 3, 8);
    CHECK(g.layers == 2);
    CHECK(g.width_index[0] <= 1);
    CHECK(std::abs(g.width_index[1] - g.width_index[0]) <= 1);
    CHECK_NOTHROW(g.validate());
  }
}

TEST_CASE("every derived genotype builds a network that runs a 16x16 patch") {
  Rng rng(63);
  for (int trial = 0; trial < 12; trial++) {
    SpaceId space = SpaceId(trial % 4);
    std::vector<std::vector<std::vector<double>>> alpha;
    alpha.push_back(random_rows(3, rng));
    alpha.push_back(random_rows(3, rng));
    Genotype g = derive_genotype(space, alpha, random_trellis(2, rng), 3, 8);

    CompactNet<float> net(g, 4, 16, 77 + uint64_t(trial));
    Tensor<float> x = Tensor<float>::alloc({1, 1, 16, 16, 16});
    for (i64 i = 0; i < x.numel(); i++) x.data()[i] = float(rng.uniform(-1.0, 1.0));
    Tensor<float> y = net.forward(x, false);
    CHECK(y.shape() == Shape({1, 4, 16, 16}));
    for (i64 i = 0; i < y.numel(); i++) CHECK(std::isfinite(y.data()[i]));
  }
}

TEST_CASE("boosting a winning op's logit never changes the derivation") {
  Rng rng(64);
  for (int trial = 0; trial < 20; trial++) {
    std::vector<std::vector<std::vector<double>>> alpha{random_rows(3, rng),
                                                        random_rows(3, rng)};
    WidthTrellis t = random_trellis(2, rng);
    Genotype before = derive_genotype(SpaceId::asym_d, alpha, t, 3, 16);

    // Locate the first retained edge of layer 0, node 0, and its winning op.
    const GenotypeEdge& e = before.cells[0][0][0];
    const auto& ops = space_ops(SpaceId::asym_d);
    size_t op_idx = 0;
    for (size_t k = 0; k < ops.size(); k++)
      if (ops[k].name == e.op) op_idx = k;
    alpha[0][size_t(e.source)][op_idx] += 2.0;

    Genotype after = derive_genotype(SpaceId::asym_d, alpha, t, 3, 16);
    CHECK(before == after);
  }
}

TEST_CASE("genotype text round-trips exactly") {
  Genotype g = hand_genotype();
  std::string text = serialize_genotype(g);
  Genotype back = parse_genotype(text);
  CHECK(back == g);
  CHECK(serialize_genotype(back) == text);

  Rng rng(65);
  for (int trial = 0; trial < 20; trial++) {
    std::vector<std::vector<std::vector<double>>> alpha{random_rows(3, rng),
                                                        random_rows(3, rng)};
    Genotype d = derive_genotype(SpaceId::sym_d, alpha, random_trellis(2, rng), 3, 16);
    CHECK(parse_genotype(serialize_genotype(d)) == d);
  }
}

TEST_CASE("the serialized header names the format and version") {
  std::string text = serialize_genotype(hand_genotype());
  CHECK(text.rfind("hsinas-genotype v1\n", 0) == 0);
  CHECK(text.find("space 3d-asym-d\n") != std::string::npos);
  CHECK(text.find("widths 1 2\n") != std::string::npos);
}

TEST_CASE("malformed genotype text is rejected with parse errors") {
  const std::string good = serialize_genotype(hand_genotype());

  auto expect_kind = [](const std::string& text, ErrKind kind) {
    try {
      parse_genotype(text);
      CHECK_MESSAGE(false, "expected a failure for: ", text.substr(0, 60));
    } catch (const Error& e) {
      CHECK(e.kind() == kind);
    }
  };

  expect_kind("", ErrKind::Parse);
  expect_kind("hsinas-genotype v2\nspace 3d-asym-d\n", ErrKind::Parse);
  expect_kind("hsinas-genotype v1\nspace 3d-unknown\nlayers 1\n", ErrKind::Parse);

  std::string zero_layers = good;
  zero_layers.replace(zero_layers.find("layers 2"), 8, "layers 0");
  expect_kind(zero_layers, ErrKind::Parse);

  std::string zero_nodes = good;
  zero_nodes.replace(zero_nodes.find("nodes 3"), 7, "nodes 0");
  expect_kind(zero_nodes, ErrKind::Parse);

  std::string bad_op = good;
  bad_op.replace(bad_op.find("con_3-3"), 7, "con_9-9");
  expect_kind(bad_op, ErrKind::Contract);

  std::string discard = good;
  discard.replace(discard.find("con_3-3"), 7, "discarding");
  expect_kind(discard, ErrKind::Contract);

  std::string no_pipe = good;
  no_pipe.replace(no_pipe.find(" | "), 3, "   ");
  expect_kind(no_pipe, ErrKind::Parse);

  std::string extra_width = good;
  extra_width.replace(extra_width.find("widths 1 2"), 10, "widths 1 2 2");
  expect_kind(extra_width, ErrKind::Parse);

  std::string big_jump = good;
  big_jump.replace(big_jump.find("widths 1 2"), 10, "widths 0 2");
  expect_kind(big_jump, ErrKind::Contract);

  std::string first_wide = good;
  first_wide.replace(first_wide.find("widths 1 2"), 10, "widths 2 2");
  expect_kind(first_wide, ErrKind::Contract);

  std::string truncated = good.substr(0, good.find("cell 1"));
  expect_kind(truncated, ErrKind::Parse);

  expect_kind(good + "stray\n", ErrKind::Parse);
}

TEST_CASE("validation rejects structurally broken genotypes") {
  Genotype g = hand_genotype();
  CHECK_NOTHROW(g.validate());

  Genotype dup = g;
  dup.cells[0][1] = {{{2, "con_3-3"}, {2, "con_3-3"}}};
  CHECK_THROWS_AS(dup.validate(), Error);

  Genotype oob = g;
  oob.cells[0][0] = {{{0, "con_3-3"}, {2, "con_3-3"}}};
  CHECK_THROWS_AS(oob.validate(), Error);

  Genotype unsorted = g;
  unsorted.cells[1][2] = {{{3, "con_3-3"}, {2, "sep_3-3"}}};
  CHECK_THROWS_AS(unsorted.validate(), Error);

  Genotype wrong_space = g;
  wrong_space.space = SpaceId::sym_ud;
  CHECK_THROWS_AS(wrong_space.validate(), Error);
}
