#pragma once

#include <vector>

#include "hsinas/common.hpp"

namespace hsinas {

// Per-layer probabilities over width states. The leading layer may offer
// fewer states than later layers; a step from state k to state i is legal
// when |k - i| <= 1.
struct WidthTrellis {
  std::vector<std::vector<double>> prob;

  void validate() const;
};

// The legal path with the highest sum of log-probabilities; among equally
// good paths, the lexicographically smallest. Probabilities are floored at
// 1e-12 before taking logs.
std::vector<int> viterbi_widths(const WidthTrellis& t);

}  // namespace hsinas
