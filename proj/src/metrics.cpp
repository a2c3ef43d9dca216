#include "hsinas/metrics.hpp"

#include <cstdio>

namespace hsinas {

ConfusionMatrix::ConfusionMatrix(int classes) : k_(classes) {
  check(classes >= 1, ErrKind::Contract, "confusion matrix needs at least one class");
  counts_.assign(size_t(k_) * size_t(k_), 0);
}

i64 ConfusionMatrix::total() const {
  i64 t = 0;
  for (i64 v : counts_) t += v;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  check(other.k_ == k_, ErrKind::Dimension, "cannot merge confusion matrices of different sizes");
  for (size_t i = 0; i < counts_.size(); i++) counts_[i] += other.counts_[i];
  return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMap& reference, const ClassMap& predicted) {
  check(reference.height == predicted.height && reference.width == predicted.width,
        ErrKind::Dimension, "reference and prediction maps differ in size");
  const int k = cm.classes();
  for (size_t i = 0; i < reference.labels.size(); i++) {
    const uint16_t ref = reference.labels[i];
    if (ref == 0) continue;
    const uint16_t pred = predicted.labels[i];
    check(ref <= k, ErrKind::Contract, "reference class ", ref, " exceeds matrix size ", k);
    check(pred >= 1 && pred <= k, ErrKind::Contract, "prediction ", pred,
          " at a labeled pixel is outside 1..", k);
    cm.at(ref - 1, pred - 1)++;
  }
}

double oa(const ConfusionMatrix& cm) {
  const i64 total = cm.total();
  check(total > 0, ErrKind::UndefinedMetric, "metrics undefined on an empty confusion matrix");
  i64 diag = 0;
  for (int i = 0; i < cm.classes(); i++) diag += cm.at(i, i);
  return double(diag) / double(total);
}

double aa(const ConfusionMatrix& cm) {
  check(cm.total() > 0, ErrKind::UndefinedMetric, "metrics undefined on an empty confusion matrix");
  double sum = 0;
  int present = 0;
  for (int i = 0; i < cm.classes(); i++) {
    i64 row = 0;
    for (int j = 0; j < cm.classes(); j++) row += cm.at(i, j);
    if (row == 0) continue;  // absent class: excluded rather than scored 0
    sum += double(cm.at(i, i)) / double(row);
    present++;
  }
  return sum / double(present);
}

double kappa(const ConfusionMatrix& cm) {
  const i64 total = cm.total();
  check(total > 0, ErrKind::UndefinedMetric, "metrics undefined on an empty confusion matrix");
  const double po = oa(cm);
  double pe = 0;
  for (int i = 0; i < cm.classes(); i++) {
    i64 row = 0, col = 0;
    for (int j = 0; j < cm.classes(); j++) {
      row += cm.at(i, j);
      col += cm.at(j, i);
    }
    pe += double(row) * double(col);
  }
  pe /= double(total) * double(total);
  if (pe >= 1.0) return po >= 1.0 ? 1.0 : 0.0;  // single-class degeneracy
  return (po - pe) / (1.0 - pe);
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

}  // namespace hsinas
