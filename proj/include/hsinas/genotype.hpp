#pragma once

#include <array>
#include <string>
#include <vector>

#include "hsinas/search_space.hpp"
#include "hsinas/viterbi.hpp"

namespace hsinas {

struct GenotypeEdge {
  int source = 0;
  std::string op;
  bool operator==(const GenotypeEdge&) const = default;
};

// A discrete architecture: per layer, N nodes of two retained edges each, plus
// the decoded width index per layer. Canonical form keeps each node's edges
// ordered by source.
struct Genotype {
  SpaceId space = SpaceId::asym_d;
  int layers = 0;
  int nodes = 0;
  int base_width = 0;
  std::vector<std::vector<std::array<GenotypeEdge, 2>>> cells;  // [layer][node]
  std::vector<int> width_index;                                 // [layer]

  bool operator==(const Genotype&) const = default;
  void validate() const;
  i64 cell_width(int layer) const;
};

// Top-2 edge retention for one layer. alpha_rows holds one 8-logit row per
// edge, edges enumerated node-major with sources ascending. Edge strength is
// the best non-discarding softmax weight; ties prefer the lower source, then
// the earlier op in the space's list.
std::vector<std::array<GenotypeEdge, 2>> derive_layer_cells(
    SpaceId space, const std::vector<std::vector<double>>& alpha_rows, int nodes);

Genotype derive_genotype(SpaceId space,
                         const std::vector<std::vector<std::vector<double>>>& alpha,
                         const WidthTrellis& trellis, int nodes, int final_width);

std::string serialize_genotype(const Genotype& g);
Genotype parse_genotype(const std::string& text);

}  // namespace hsinas
