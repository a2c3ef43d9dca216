#include <algorithm>
#include <cstring>
#include <fstream>

#include "hsinas/data.hpp"

namespace hsinas {

namespace {

constexpr char kCubeMagic[4] = {'H', 'S', 'I', '1'};
constexpr char kLabelMagic[4] = {'L', 'B', 'L', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const std::string& path, i64& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(in.gcount() == 4, ErrKind::Format, path, ": truncated at byte ", offset);
  offset += 4;
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

void read_exact(std::istream& in, char* dst, i64 n, const std::string& path, i64& offset) {
  in.read(dst, std::streamsize(n));
  check(in.gcount() == std::streamsize(n), ErrKind::Format, path, ": truncated at byte ",
        offset + in.gcount());
  offset += n;
}

void check_magic(std::istream& in, const char (&magic)[4], const std::string& path, i64& offset) {
  char got[4];
  in.read(got, 4);
  check(in.gcount() == 4, ErrKind::Format, path, ": truncated at byte 0");
  check(std::memcmp(got, magic, 4) == 0, ErrKind::Format, path, ": bad magic at byte 0, expected ",
        std::string(magic, 4));
  offset += 4;
}

void expect_eof(std::istream& in, const std::string& path, i64 offset) {
  char extra;
  in.read(&extra, 1);
  check(in.gcount() == 0, ErrKind::Format, path, ": trailing bytes at ", offset);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), ErrKind::Format, "cannot open ", path, " for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), ErrKind::Format, "cannot open ", path);
  return in;
}

}  // namespace

i64 LabelMap::labeled_count() const {
  i64 n = 0;
  for (uint16_t v : labels) n += (v != 0);
  return n;
}

uint16_t LabelMap::max_class() const {
  uint16_t m = 0;
  for (uint16_t v : labels) m = std::max(m, v);
  return m;
}

HsiCube load_cube(const std::string& path) {
  std::ifstream in = open_in(path);
  i64 offset = 0;
  check_magic(in, kCubeMagic, path, offset);
  HsiCube cube;
  cube.height = read_u32(in, path, offset);
  cube.width = read_u32(in, path, offset);
  cube.bands = read_u32(in, path, offset);
  check(cube.height > 0 && cube.width > 0 && cube.bands > 0, ErrKind::Format, path,
        ": zero-sized cube in header");
  const i64 n = cube.height * cube.width * cube.bands;
  cube.values.resize(size_t(n));
  static_assert(sizeof(float) == 4);
  read_exact(in, reinterpret_cast<char*>(cube.values.data()), n * 4, path, offset);
  for (float v : cube.values)
    check(std::isfinite(v), ErrKind::Format, path, ": non-finite value in cube body");
  expect_eof(in, path, offset);
  return cube;
}

void save_cube(const HsiCube& cube, const std::string& path) {
  check(i64(cube.values.size()) == cube.height * cube.width * cube.bands, ErrKind::Contract,
        "cube value count does not match its dimensions");
  std::ofstream out = open_out(path);
  out.write(kCubeMagic, 4);
  write_u32(out, uint32_t(cube.height));
  write_u32(out, uint32_t(cube.width));
  write_u32(out, uint32_t(cube.bands));
  out.write(reinterpret_cast<const char*>(cube.values.data()),
            std::streamsize(cube.values.size() * 4));
  check(out.good(), ErrKind::Format, "write failed for ", path);
}

LabelMap load_labels(const std::string& path) {
  std::ifstream in = open_in(path);
  i64 offset = 0;
  check_magic(in, kLabelMagic, path, offset);
  LabelMap map;
  map.height = read_u32(in, path, offset);
  map.width = read_u32(in, path, offset);
  check(map.height > 0 && map.width > 0, ErrKind::Format, path, ": zero-sized map in header");
  const i64 n = map.height * map.width;
  map.labels.resize(size_t(n));
  read_exact(in, reinterpret_cast<char*>(map.labels.data()), n * 2, path, offset);
  expect_eof(in, path, offset);
  return map;
}

void save_labels(const LabelMap& map, const std::string& path) {
  check(i64(map.labels.size()) == map.height * map.width, ErrKind::Contract,
        "label count does not match map dimensions");
  std::ofstream out = open_out(path);
  out.write(kLabelMagic, 4);
  write_u32(out, uint32_t(map.height));
  write_u32(out, uint32_t(map.width));
  out.write(reinterpret_cast<const char*>(map.labels.data()),
            std::streamsize(map.labels.size() * 2));
  check(out.good(), ErrKind::Format, "write failed for ", path);
}

Split split_labels(const LabelMap& map, const SplitSpec& spec) {
  check(spec.train_per_class >= 1 && spec.val_per_class >= 0, ErrKind::Config,
        "split needs at least one training pixel per class");
  const uint16_t k = map.max_class();
  check(k >= 1, ErrKind::Config, "label map holds no labeled pixels to split");

  std::vector<std::vector<i64>> by_class(size_t(k) + 1);
  for (i64 i = 0; i < i64(map.labels.size()); i++)
    if (map.labels[size_t(i)] != 0) by_class[map.labels[size_t(i)]].push_back(i);

  Rng rng(derive_seed(spec.seed, "split"));
  Split out;
  for (LabelMap* m : {&out.train, &out.val, &out.test}) {
    m->height = map.height;
    m->width = map.width;
    m->labels.assign(map.labels.size(), 0);
  }
  for (uint16_t c = 1; c <= k; c++) {
    auto& pix = by_class[c];
    const i64 need = spec.train_per_class + spec.val_per_class;
    check(i64(pix.size()) >= need, ErrKind::Config, "class ", c, " has only ", pix.size(),
          " labeled pixels, need at least ", need, " for the requested split");
    rng.shuffle(pix);
    for (i64 i = 0; i < i64(pix.size()); i++) {
      LabelMap& dst = i < spec.train_per_class            ? out.train
                      : i < need                          ? out.val
                                                          : out.test;
      dst.labels[size_t(pix[size_t(i)])] = c;
    }
  }
  return out;
}

Sample extract_sample(const HsiCube& cube, const LabelMap& labels, i64 row, i64 col, i64 h,
                      i64 w) {
  check(labels.height == cube.height && labels.width == cube.width, ErrKind::Dimension,
        "label map does not match cube dimensions");
  check(row >= 0 && col >= 0 && h >= 1 && w >= 1 && row + h <= cube.height &&
            col + w <= cube.width,
        ErrKind::Contract, "sample window [", row, ",", col, "]+", h, "x", w,
        " exceeds the scene");
  Sample s;
  s.row = row;
  s.col = col;
  s.h = h;
  s.w = w;
  s.bands = cube.bands;
  s.x.resize(size_t(cube.bands * h * w));
  s.y.resize(size_t(h * w));
  for (i64 b = 0; b < cube.bands; b++)
    for (i64 r = 0; r < h; r++)
      std::memcpy(&s.x[size_t((b * h + r) * w)], &cube.values[size_t(((b * cube.height) + row + r) * cube.width + col)],
                  size_t(w) * sizeof(float));
  for (i64 r = 0; r < h; r++)
    std::memcpy(&s.y[size_t(r * w)], &labels.labels[size_t((row + r) * labels.width + col)],
                size_t(w) * sizeof(uint16_t));
  return s;
}

void normalize_cube(HsiCube& cube, const LabelMap& stats_from) {
  check(stats_from.height == cube.height && stats_from.width == cube.width, ErrKind::Dimension,
        "statistics map does not match cube dimensions");
  check(stats_from.labeled_count() > 0, ErrKind::Contract,
        "normalization needs at least one labeled pixel");
  std::vector<float> mean(size_t(cube.bands)), stddev(size_t(cube.bands));
  for (i64 b = 0; b < cube.bands; b++) {
    double sum = 0, sq = 0;
    i64 n = 0;
    for (i64 r = 0; r < cube.height; r++)
      for (i64 c = 0; c < cube.width; c++) {
        if (stats_from.at(r, c) == 0) continue;
        double v = cube.at(b, r, c);
        sum += v;
        sq += v * v;
        n++;
      }
    double m = sum / double(n);
    double var = std::max(sq / double(n) - m * m, 0.0);
    mean[size_t(b)] = float(m);
    stddev[size_t(b)] = float(std::sqrt(var) > 0 ? std::sqrt(var) : 1.0);
  }
  apply_normalization(cube, mean, stddev);
}

void apply_normalization(HsiCube& cube, const std::vector<float>& mean,
                         const std::vector<float>& stddev) {
  check(i64(mean.size()) == cube.bands && i64(stddev.size()) == cube.bands, ErrKind::Dimension,
        "normalization statistics do not match band count");
  for (i64 b = 0; b < cube.bands; b++) {
    const float m = mean[size_t(b)], s = stddev[size_t(b)];
    check(s > 0, ErrKind::Contract, "band ", b, " has non-positive stddev");
    float* plane = &cube.values[size_t(b * cube.pixels())];
    for (i64 i = 0; i < cube.pixels(); i++) plane[i] = (plane[i] - m) / s;
  }
  cube.norm_mean = mean;
  cube.norm_std = stddev;
}

}  // namespace hsinas
