#include "hsinas/viterbi.hpp"

#include <cmath>
#include <limits>

namespace hsinas {

namespace {
constexpr double kFloor = 1e-12;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

void WidthTrellis::validate() const {
  check(!prob.empty(), ErrKind::Contract, "width trellis needs at least one layer");
  for (size_t l = 0; l < prob.size(); l++) {
    check(!prob[l].empty(), ErrKind::Contract, "trellis layer ", l, " has no states");
    double sum = 0;
    for (double p : prob[l]) {
      check(std::isfinite(p) && p >= 0, ErrKind::Contract, "trellis layer ", l,
            " holds a non-probability value");
      sum += p;
    }
    check(std::abs(sum - 1.0) <= 1e-6, ErrKind::Contract, "trellis layer ", l,
          " probabilities sum to ", sum, ", expected 1");
  }
}

std::vector<int> viterbi_widths(const WidthTrellis& t) {
  t.validate();
  const int layers = int(t.prob.size());

  std::vector<std::vector<double>> lp{size_t(layers)};
  for (int l = 0; l < layers; l++) {
    lp[size_t(l)].reserve(t.prob[size_t(l)].size());
    for (double p : t.prob[size_t(l)]) lp[size_t(l)].push_back(std::log(std::max(p, kFloor)));
  }

  // suffix[l][i]: best achievable score of a legal path starting at (l, i).
  // Filling it back to front lets the reconstruction walk forward and pick
  // the smallest state at every tie, which yields the lexicographically
  // smallest optimal path.
  std::vector<std::vector<double>> suffix{size_t(layers)};
  suffix[size_t(layers - 1)] = lp[size_t(layers - 1)];
  for (int l = layers - 2; l >= 0; l--) {
    const auto& nxt = suffix[size_t(l + 1)];
    suffix[size_t(l)].assign(lp[size_t(l)].size(), kNegInf);
    for (int i = 0; i < int(lp[size_t(l)].size()); i++) {
      double best = kNegInf;
      for (int j = std::max(0, i - 1); j <= std::min(int(nxt.size()) - 1, i + 1); j++)
        best = std::max(best, nxt[size_t(j)]);
      if (best != kNegInf) suffix[size_t(l)][size_t(i)] = lp[size_t(l)][size_t(i)] + best;
    }
  }

  std::vector<int> path(size_t(layers), 0);
  int at = 0;
  for (int i = 1; i < int(suffix[0].size()); i++)
    if (suffix[0][size_t(i)] > suffix[0][size_t(at)]) at = i;
  check(suffix[0][size_t(at)] != kNegInf, ErrKind::Contract,
        "trellis admits no legal path end to end");
  path[0] = at;
  for (int l = 1; l < layers; l++) {
    const auto& nxt = suffix[size_t(l)];
    int pick = -1;
    for (int j = std::max(0, at - 1); j <= std::min(int(nxt.size()) - 1, at + 1); j++)
      if (pick < 0 || nxt[size_t(j)] > nxt[size_t(pick)]) pick = j;
    at = pick;
    path[size_t(l)] = at;
  }
  return path;
}

}  // namespace hsinas
