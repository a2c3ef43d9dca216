#pragma once

#include <string>
#include <vector>

#include "hsinas/data.hpp"

namespace hsinas {

// Rows index the reference class, columns the predicted class (0-based for
// class ids 1..K). Only labeled reference pixels contribute.
struct ConfusionMatrix {
  explicit ConfusionMatrix(int classes);

  int classes() const { return k_; }
  i64 at(int ref, int pred) const { return counts_[size_t(ref * k_ + pred)]; }
  i64& at(int ref, int pred) { return counts_[size_t(ref * k_ + pred)]; }
  i64 total() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

 private:
  int k_;
  std::vector<i64> counts_;
};

void accumulate(ConfusionMatrix& cm, const LabelMap& reference, const ClassMap& predicted);

double oa(const ConfusionMatrix& cm);
double aa(const ConfusionMatrix& cm);
double kappa(const ConfusionMatrix& cm);

// "96.53" style fixed two-decimal percentage.
std::string format_percent(double fraction);

}  // namespace hsinas
