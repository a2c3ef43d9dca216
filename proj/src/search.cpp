#include "hsinas/search.hpp"

#include <algorithm>
#include <cstdio>

namespace hsinas {

namespace {

bool has_label(const Sample& s) {
  return std::any_of(s.y.begin(), s.y.end(), [](uint16_t v) { return v != 0; });
}

std::vector<i64> window_anchors(i64 extent, i64 patch) {
  std::vector<i64> anchors;
  for (i64 a = 0; a < extent; a += patch) anchors.push_back(std::min(a, extent - patch));
  anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());
  return anchors;
}

}  // namespace

Sample random_labeled_crop(const HsiCube& cube, const LabelMap& labels, i64 patch, Rng& rng) {
  check(cube.height >= patch && cube.width >= patch, ErrKind::Config, "scene ", cube.height, "x",
        cube.width, " is smaller than the requested patch ", patch);
  check(labels.height == cube.height && labels.width == cube.width, ErrKind::Dimension,
        "label map does not match the scene");
  const i64 row_span = cube.height - patch + 1;
  const i64 col_span = cube.width - patch + 1;
  for (i64 rejects = 0; rejects < 1000; rejects++) {
    Sample s = extract_sample(cube, labels, rng.below(row_span), rng.below(col_span), patch, patch);
    if (has_label(s)) return s;
  }
  fail(ErrKind::EmptySupervision,
       "1000 consecutive crops held no labeled pixel; label map too sparse for patch size ",
       patch);
}

std::vector<Sample> sliding_windows(const HsiCube& cube, const LabelMap& labels, i64 patch) {
  check(cube.height >= patch && cube.width >= patch, ErrKind::Config, "scene ", cube.height, "x",
        cube.width, " is smaller than the requested patch ", patch);
  check(labels.height == cube.height && labels.width == cube.width, ErrKind::Dimension,
        "label map does not match the scene");
  std::vector<Sample> out;
  for (i64 r : window_anchors(cube.height, patch))
    for (i64 c : window_anchors(cube.width, patch)) {
      Sample s = extract_sample(cube, labels, r, c, patch, patch);
      if (has_label(s)) out.push_back(std::move(s));
    }
  return out;
}

SamplePool build_pool(const HsiCube& cube, const LabelMap& train_labels, const LabelMap& val_labels,
                      const SearchConfig& cfg) {
  cfg.validate();
  check(cube.height >= cfg.patch_size && cube.width >= cfg.patch_size, ErrKind::Config,
        "scene ", cube.height, "x", cube.width, " is smaller than the search patch ",
        cfg.patch_size);
  check(train_labels.height == cube.height && train_labels.width == cube.width, ErrKind::Dimension,
        "training label map does not match the scene");
  check(val_labels.height == cube.height && val_labels.width == cube.width, ErrKind::Dimension,
        "validation label map does not match the scene");

  Rng rng(derive_seed(cfg.seed, "search-pool"));
  SamplePool pool;
  pool.train_theta.reserve(size_t(cfg.pool_theta));
  pool.train_arch.reserve(size_t(cfg.pool_arch));
  for (i64 i = 0; i < cfg.pool_theta; i++)
    pool.train_theta.push_back(random_labeled_crop(cube, train_labels, cfg.patch_size, rng));
  for (i64 i = 0; i < cfg.pool_arch; i++)
    pool.train_arch.push_back(random_labeled_crop(cube, train_labels, cfg.patch_size, rng));

  pool.val = sliding_windows(cube, val_labels, cfg.patch_size);
  check(!pool.val.empty(), ErrKind::EmptySupervision,
        "no validation window contains a labeled pixel");
  return pool;
}

std::string history_line(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "epoch %lld  loss %.4f  val oa %.4f aa %.4f kappa %.4f  lr %.5f",
                (long long)r.epoch, r.train_loss, r.val_oa, r.val_aa, r.val_kappa, r.lr);
  return buf;
}

}  // namespace hsinas
