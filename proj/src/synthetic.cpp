#include <cmath>

#include "hsinas/data.hpp"

namespace hsinas {

std::vector<std::vector<float>> synth_signatures(i64 classes, i64 bands, Rng& rng) {
  check(classes >= 1 && bands >= 2, ErrKind::Contract, "need at least 1 class and 2 bands");
  std::vector<std::vector<float>> sigs;
  for (i64 k = 0; k < classes; k++) {
    std::vector<float> s(size_t(bands), 0.0f);
    // One dominant bump at a class-specific position keeps signatures
    // pairwise separated even for large class counts; secondary bumps add
    // texture.
    const double primary_center = (double(k) + 0.5) / double(classes) * double(bands - 1);
    const double primary_width = std::max(1.0, double(bands) / (2.5 * double(classes)));
    auto add_bump = [&](double amp, double center, double width) {
      for (i64 b = 0; b < bands; b++) {
        double d = (double(b) - center) / width;
        s[size_t(b)] += float(amp * std::exp(-0.5 * d * d));
      }
    };
    add_bump(1.0, primary_center, primary_width);
    const int extras = 1 + int(rng.below(2));
    for (int e = 0; e < extras; e++)
      add_bump(rng.uniform(0.1, 0.3), rng.uniform(0, double(bands - 1)),
               rng.uniform(double(bands) / 10.0, double(bands) / 4.0));
    sigs.push_back(std::move(s));
  }
  return sigs;
}

SynthScene gen_synthetic(i64 height, i64 width, i64 bands, i64 classes, double noise_sigma,
                         uint64_t seed) {
  check(height >= 1 && width >= 1, ErrKind::Contract, "scene must be non-empty");
  check(classes >= 1 && classes <= 65535, ErrKind::Contract, "class count out of range");
  check(noise_sigma >= 0, ErrKind::Contract, "noise sigma must be non-negative");

  Rng sig_rng(derive_seed(seed, "signatures"));
  auto sigs = synth_signatures(classes, bands, sig_rng);

  // Voronoi partition around jittered grid sites: contiguous regions with
  // roughly balanced areas.
  Rng region_rng(derive_seed(seed, "regions"));
  i64 grid = 1;
  while (grid * grid < classes) grid++;
  std::vector<double> site_r, site_c;
  std::vector<i64> cells(size_t(grid * grid), 0);
  for (i64 i = 0; i < grid * grid; i++) cells[size_t(i)] = i;
  region_rng.shuffle(cells);
  for (i64 k = 0; k < classes; k++) {
    i64 cell = cells[size_t(k)];
    i64 gr = cell / grid, gc = cell % grid;
    site_r.push_back((double(gr) + region_rng.uniform(0.3, 0.7)) / double(grid) * double(height));
    site_c.push_back((double(gc) + region_rng.uniform(0.3, 0.7)) / double(grid) * double(width));
  }

  SynthScene scene;
  scene.labels.height = height;
  scene.labels.width = width;
  scene.labels.labels.resize(size_t(height * width));
  for (i64 r = 0; r < height; r++)
    for (i64 c = 0; c < width; c++) {
      i64 best = 0;
      double best_d = 1e300;
      for (i64 k = 0; k < classes; k++) {
        double dr = double(r) - site_r[size_t(k)], dc = double(c) - site_c[size_t(k)];
        double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      scene.labels.at(r, c) = uint16_t(best + 1);
    }

  scene.cube.height = height;
  scene.cube.width = width;
  scene.cube.bands = bands;
  scene.cube.values.resize(size_t(height * width * bands));
  Rng noise_rng(derive_seed(seed, "noise"));
  for (i64 r = 0; r < height; r++)
    for (i64 c = 0; c < width; c++) {
      const auto& sig = sigs[size_t(scene.labels.at(r, c) - 1)];
      for (i64 b = 0; b < bands; b++) {
        double v = sig[size_t(b)];
        if (noise_sigma > 0) v += noise_rng.normal() * noise_sigma;
        scene.cube.at(b, r, c) = float(v);
      }
    }
  return scene;
}

}  // namespace hsinas
