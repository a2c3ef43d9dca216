#include "hsinas/train.hpp"

#include <cstdio>

namespace hsinas {

namespace {

// Plane-wise index map for one transform step; labels use band 0 semantics.
i64 src_index(i64 r, i64 c, i64 h, i64 w, bool hflip, bool vflip, int quarter_turns) {
  // Destination (r, c) pulled back through rotation, then flips.
  i64 sr = r, sc = c;
  switch (quarter_turns & 3) {
    case 0: break;
    case 1:  // 90 degrees counterclockwise: dest(r,c) = src(c, w-1-r)
      sr = c;
      sc = w - 1 - r;
      break;
    case 2:
      sr = h - 1 - r;
      sc = w - 1 - c;
      break;
    case 3:
      sr = h - 1 - c;
      sc = r;
      break;
  }
  if (hflip) sc = w - 1 - sc;
  if (vflip) sr = h - 1 - sr;
  return sr * w + sc;
}

}  // namespace

Sample transform_sample(const Sample& s, bool hflip, bool vflip, int quarter_turns) {
  check(quarter_turns >= 0 && quarter_turns <= 3, ErrKind::Contract,
        "quarter_turns must be 0..3, got ", quarter_turns);
  check(s.h == s.w || quarter_turns % 2 == 0, ErrKind::Contract,
        "quarter-turn rotation needs a square sample, got ", s.h, "x", s.w);
  Sample out = s;
  const i64 pixels = s.h * s.w;
  for (i64 r = 0; r < s.h; r++)
    for (i64 c = 0; c < s.w; c++) {
      const i64 dst = r * s.w + c;
      const i64 src = src_index(r, c, s.h, s.w, hflip, vflip, quarter_turns);
      out.y[size_t(dst)] = s.y[size_t(src)];
      for (i64 b = 0; b < s.bands; b++)
        out.x[size_t(b * pixels + dst)] = s.x[size_t(b * pixels + src)];
    }
  return out;
}

Sample random_augment(const Sample& s, Rng& rng) {
  const bool hflip = rng.below(2) == 1;
  const bool vflip = rng.below(2) == 1;
  const int quarter_turns = int(rng.below(4));
  return transform_sample(s, hflip, vflip, quarter_turns);
}

std::string train_line(const TrainRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "iter %lld  loss %.4f  val oa %.4f aa %.4f kappa %.4f  lr %.5f",
                (long long)r.iter, r.train_loss, r.val_oa, r.val_aa, r.val_kappa, r.lr);
  return buf;
}

}  // namespace hsinas
