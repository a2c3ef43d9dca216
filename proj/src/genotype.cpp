#include "hsinas/genotype.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hsinas {

namespace {

constexpr std::array<double, 3> kGamma{1.0, 1.5, 2.0};

bool known_op(SpaceId space, const std::string& name) {
  for (const OpKind& k : space_ops(space))
    if (k.name == name) return true;
  return false;
}

std::vector<double> softmax_row(const std::vector<double>& logits) {
  double peak = logits[0];
  for (double v : logits) peak = std::max(peak, v);
  std::vector<double> out(logits.size());
  double sum = 0;
  for (size_t i = 0; i < logits.size(); i++) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

}  // namespace

void Genotype::validate() const {
  check(layers >= 1, ErrKind::Contract, "genotype needs at least one layer");
  check(nodes >= 1, ErrKind::Contract, "genotype needs at least one node per cell");
  check(base_width >= 1, ErrKind::Contract, "genotype base width must be positive");
  check(i64(cells.size()) == layers, ErrKind::Contract, "genotype lists ", cells.size(),
        " cells for ", layers, " layers");
  check(i64(width_index.size()) == layers, ErrKind::Contract, "genotype lists ",
        width_index.size(), " width choices for ", layers, " layers");

  for (int l = 0; l < layers; l++) {
    check(i64(cells[size_t(l)].size()) == nodes, ErrKind::Contract, "layer ", l, " lists ",
          cells[size_t(l)].size(), " nodes, expected ", nodes);
    for (int i = 0; i < nodes; i++) {
      const auto& node = cells[size_t(l)][size_t(i)];
      for (const GenotypeEdge& e : node) {
        check(e.source >= 0 && e.source < i + 2, ErrKind::Contract, "layer ", l, " node ", i,
              " edge from source ", e.source, " is outside its ", i + 2, " inputs");
        check(known_op(space, e.op), ErrKind::Contract, "layer ", l, " node ", i,
              " uses unknown op '", e.op, "' for space ", space_id_string(space));
        check(e.op != "discarding", ErrKind::Contract, "layer ", l, " node ", i,
              " retains the discarding op");
      }
      check(node[0].source < node[1].source, ErrKind::Contract, "layer ", l, " node ", i,
            " edges must come from two distinct sources in ascending order");
    }

    const int w = width_index[size_t(l)];
    check(w >= 0 && w <= 2, ErrKind::Contract, "layer ", l, " width index ", w,
          " outside 0..2");
    if (l == 0)
      check(w <= 1, ErrKind::Contract, "first layer offers only width indices 0 and 1, got ", w);
    if (l > 0)
      check(std::abs(w - width_index[size_t(l - 1)]) <= 1, ErrKind::Contract,
            "width index jumps from ", width_index[size_t(l - 1)], " to ", w, " at layer ", l);
  }
}

i64 Genotype::cell_width(int layer) const {
  return i64(kGamma[size_t(width_index[size_t(layer)])] * double(base_width));
}

std::vector<std::array<GenotypeEdge, 2>> derive_layer_cells(
    SpaceId space, const std::vector<std::vector<double>>& alpha_rows, int nodes) {
  const auto& ops = space_ops(space);
  i64 expected = 0;
  for (int i = 0; i < nodes; i++) expected += i + 2;
  check(i64(alpha_rows.size()) == expected, ErrKind::Contract, "expected ", expected,
        " alpha rows for ", nodes, " nodes, got ", alpha_rows.size());

  std::vector<std::array<GenotypeEdge, 2>> out;
  size_t e = 0;
  for (int i = 0; i < nodes; i++) {
    struct Ranked {
      int source;
      double strength;
      std::string op;
    };
    std::vector<Ranked> ranked;
    for (int src = 0; src < i + 2; src++, e++) {
      const auto& row = alpha_rows[e];
      check(row.size() == ops.size(), ErrKind::Contract, "alpha row ", e, " has ", row.size(),
            " entries, expected ", ops.size());
      for (double v : row)
        check(std::isfinite(v), ErrKind::Contract, "alpha row ", e, " holds a non-finite logit");
      std::vector<double> w = softmax_row(row);
      double best = -1;
      std::string best_op;
      for (size_t k = 0; k < ops.size(); k++) {
        if (ops[k].family == ConvFamily::discard) continue;
        if (w[k] > best) {
          best = w[k];
          best_op = ops[k].name;
        }
      }
      ranked.push_back({src, best, best_op});
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.strength > b.strength; });
    GenotypeEdge a{ranked[0].source, ranked[0].op};
    GenotypeEdge b{ranked[1].source, ranked[1].op};
    if (b.source < a.source) std::swap(a, b);
    out.push_back({a, b});
  }
  return out;
}

Genotype derive_genotype(SpaceId space,
                         const std::vector<std::vector<std::vector<double>>>& alpha,
                         const WidthTrellis& trellis, int nodes, int final_width) {
  check(!alpha.empty(), ErrKind::Contract, "need alpha for at least one layer");
  check(trellis.prob.size() == alpha.size(), ErrKind::Contract, "trellis spans ",
        trellis.prob.size(), " layers but alpha spans ", alpha.size());

  Genotype g;
  g.space = space;
  g.layers = int(alpha.size());
  g.nodes = nodes;
  g.base_width = final_width;
  for (const auto& rows : alpha) g.cells.push_back(derive_layer_cells(space, rows, nodes));
  g.width_index = viterbi_widths(trellis);
  g.validate();
  return g;
}

std::string serialize_genotype(const Genotype& g) {
  g.validate();
  std::ostringstream out;
  out << "hsinas-genotype v1\n";
  out << "space " << space_id_string(g.space) << "\n";
  out << "layers " << g.layers << "\n";
  out << "nodes " << g.nodes << "\n";
  out << "width " << g.base_width << "\n";
  out << "widths";
  for (int w : g.width_index) out << " " << w;
  out << "\n";
  for (int l = 0; l < g.layers; l++) {
    out << "cell " << l << "\n";
    for (int i = 0; i < g.nodes; i++) {
      const auto& node = g.cells[size_t(l)][size_t(i)];
      out << "node " << i << ": " << node[0].source << " " << node[0].op << " | "
          << node[1].source << " " << node[1].op << "\n";
    }
  }
  return out.str();
}

namespace {

struct LineReader {
  std::istringstream in;
  int line_no = 0;

  explicit LineReader(const std::string& text) : in(text) {}

  std::string next(const char* what) {
    std::string line;
    while (std::getline(in, line)) {
      line_no++;
      if (!line.empty()) return line;
    }
    fail(ErrKind::Parse, "genotype text ends early: expected ", what, " after line ", line_no);
  }
};

[[noreturn]] void parse_fail(int line_no, const std::string& line, const char* why) {
  fail(ErrKind::Parse, "genotype line ", line_no, ": ", why, " in '", line, "'");
}

i64 field_int(std::istringstream& s, int line_no, const std::string& line, const char* what) {
  i64 v;
  if (!(s >> v)) parse_fail(line_no, line, what);
  return v;
}

void expect_key(std::istringstream& s, int line_no, const std::string& line, const char* key) {
  std::string k;
  if (!(s >> k) || k != key) parse_fail(line_no, line, (std::string("expected '") + key + "' field").c_str());
}

}  // namespace

Genotype parse_genotype(const std::string& text) {
  LineReader r(text);

  std::string header = r.next("header");
  if (header != "hsinas-genotype v1")
    parse_fail(r.line_no, header, "unsupported header, expected 'hsinas-genotype v1'");

  Genotype g;
  {
    std::string line = r.next("space");
    std::istringstream s(line);
    expect_key(s, r.line_no, line, "space");
    std::string id;
    if (!(s >> id)) parse_fail(r.line_no, line, "missing space id");
    try {
      g.space = parse_space(id);
    } catch (const Error&) {
      parse_fail(r.line_no, line, "unknown space id");
    }
  }
  auto int_field = [&](const char* key) {
    std::string line = r.next(key);
    std::istringstream s(line);
    expect_key(s, r.line_no, line, key);
    return int(field_int(s, r.line_no, line, "missing integer value"));
  };
  g.layers = int_field("layers");
  g.nodes = int_field("nodes");
  g.base_width = int_field("width");
  if (g.layers < 1) fail(ErrKind::Parse, "genotype declares ", g.layers, " layers");
  if (g.nodes < 1) fail(ErrKind::Parse, "genotype declares ", g.nodes, " nodes");

  {
    std::string line = r.next("widths");
    std::istringstream s(line);
    expect_key(s, r.line_no, line, "widths");
    for (int l = 0; l < g.layers; l++)
      g.width_index.push_back(int(field_int(s, r.line_no, line, "missing width index")));
    i64 extra;
    if (s >> extra) parse_fail(r.line_no, line, "more width indices than layers");
  }

  for (int l = 0; l < g.layers; l++) {
    std::string line = r.next("cell");
    {
      std::istringstream s(line);
      expect_key(s, r.line_no, line, "cell");
      if (field_int(s, r.line_no, line, "missing cell index") != l)
        parse_fail(r.line_no, line, "cells must appear in layer order");
    }
    std::vector<std::array<GenotypeEdge, 2>> layer;
    for (int i = 0; i < g.nodes; i++) {
      std::string nl = r.next("node");
      std::istringstream s(nl);
      expect_key(s, r.line_no, nl, "node");
      std::string idx_colon;
      if (!(s >> idx_colon) || idx_colon != std::to_string(i) + ":")
        parse_fail(r.line_no, nl, "nodes must appear in order as 'node <i>:'");
      std::array<GenotypeEdge, 2> node;
      for (int eidx = 0; eidx < 2; eidx++) {
        node[size_t(eidx)].source = int(field_int(s, r.line_no, nl, "missing edge source"));
        if (!(s >> node[size_t(eidx)].op)) parse_fail(r.line_no, nl, "missing edge op name");
        if (eidx == 0) {
          std::string sep;
          if (!(s >> sep) || sep != "|") parse_fail(r.line_no, nl, "expected '|' between edges");
        }
      }
      std::string extra;
      if (s >> extra) parse_fail(r.line_no, nl, "trailing text after the second edge");
      layer.push_back(node);
    }
    g.cells.push_back(std::move(layer));
  }

  {
    std::string line;
    while (std::getline(r.in, line)) {
      r.line_no++;
      if (!line.empty()) parse_fail(r.line_no, line, "unexpected trailing content");
    }
  }

  g.validate();
  return g;
}

}  // namespace hsinas
