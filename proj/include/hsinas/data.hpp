#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsinas/common.hpp"

namespace hsinas {

// Dense hyperspectral scene, stored as band-major planes:
// values[(b * height + r) * width + c].
struct HsiCube {
  i64 height = 0, width = 0, bands = 0;
  std::vector<float> values;
  // Per-band standardization statistics; filled by normalize_cube and carried
  // in checkpoints so inference applies the training-time transform.
  std::vector<float> norm_mean, norm_std;

  i64 pixels() const { return height * width; }
  float& at(i64 b, i64 r, i64 c) { return values[size_t((b * height + r) * width + c)]; }
  float at(i64 b, i64 r, i64 c) const { return values[size_t((b * height + r) * width + c)]; }
};

// Row-major class ids; 0 marks an unlabeled pixel, 1..K are classes.
struct LabelMap {
  i64 height = 0, width = 0;
  std::vector<uint16_t> labels;

  uint16_t& at(i64 r, i64 c) { return labels[size_t(r * width + c)]; }
  uint16_t at(i64 r, i64 c) const { return labels[size_t(r * width + c)]; }
  i64 labeled_count() const;
  uint16_t max_class() const;
};

// Predicted classes share the LabelMap layout (0 never appears in practice).
using ClassMap = LabelMap;

struct Sample {
  i64 row = 0, col = 0;    // anchor of the crop in the source scene
  i64 h = 0, w = 0;
  i64 bands = 0;
  std::vector<float> x;    // band-major planes, like HsiCube
  std::vector<uint16_t> y; // row-major labels
};

HsiCube load_cube(const std::string& path);
void save_cube(const HsiCube& cube, const std::string& path);
LabelMap load_labels(const std::string& path);
void save_labels(const LabelMap& map, const std::string& path);

struct SplitSpec {
  i64 train_per_class = 0;
  i64 val_per_class = 0;
  uint64_t seed = 0;
};

struct Split {
  LabelMap train, val, test;
};

Split split_labels(const LabelMap& map, const SplitSpec& spec);

Sample extract_sample(const HsiCube& cube, const LabelMap& labels, i64 row, i64 col, i64 h, i64 w);

// Computes per-band mean/std over the labeled pixels of `stats_from` and
// standardizes every pixel of the cube with them. Stats land in the cube's
// norm_mean/norm_std.
void normalize_cube(HsiCube& cube, const LabelMap& stats_from);

// Re-applies previously computed statistics (e.g. restored from a
// checkpoint) to a freshly loaded cube.
void apply_normalization(HsiCube& cube, const std::vector<float>& mean,
                         const std::vector<float>& stddev);

// Smooth per-class spectral signatures: a few Gaussian bumps over the band
// axis per class, pairwise well separated.
std::vector<std::vector<float>> synth_signatures(i64 classes, i64 bands, Rng& rng);

struct SynthScene {
  HsiCube cube;
  LabelMap labels;
};

SynthScene gen_synthetic(i64 height, i64 width, i64 bands, i64 classes, double noise_sigma,
                         uint64_t seed);

}  // namespace hsinas
