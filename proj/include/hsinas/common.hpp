#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hsinas {

using i64 = std::int64_t;

// Error categories surfaced through the CLI exit codes.
enum class ErrKind { Contract, Dimension, Format, Config, Parse, EmptySupervision, UndefinedMetric, Diverged };

class Error : public std::runtime_error {
public:
  Error(ErrKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrKind kind() const { return kind_; }

private:
  ErrKind kind_;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
[[noreturn]] void fail(ErrKind kind, const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  throw Error(kind, os.str());
}

template <class... Args>
void check(bool cond, ErrKind kind, const Args&... args) {
  if (!cond) fail(kind, args...);
}

// Dense row-major extents, at most 5 axes ([B,C,D,H,W] is the largest layout used).
struct Shape {
  std::array<i64, 5> ext{};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<i64> dims) {
    check(dims.size() <= 5, ErrKind::Contract, "shape rank ", dims.size(), " exceeds 5");
    for (i64 d : dims) ext[rank++] = d;
  }

  i64 operator[](int i) const { return ext[i]; }
  i64& operator[](int i) { return ext[i]; }

  i64 numel() const {
    i64 n = 1;
    for (int i = 0; i < rank; i++) n *= ext[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; i++)
      if (ext[i] != o.ext[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank; i++) s += (i ? "," : "") + std::to_string(ext[i]);
    return s + "]";
  }
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent deterministic stream for a named component of a run.
inline uint64_t derive_seed(uint64_t seed, uint64_t stream) { return splitmix64(seed ^ splitmix64(stream)); }

// Named streams so independent consumers of one user seed stay decorrelated.
inline uint64_t derive_seed(uint64_t seed, std::string_view stream) {
  uint64_t h = 1469598103934665603ull;
  for (char c : stream) {
    h ^= uint64_t(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  return derive_seed(seed, h);
}

// mt19937_64 is pinned by the standard; the transforms below avoid the
// implementation-defined std:: distributions so streams are portable.
class Rng {
public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0;
    while (u1 == 0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0, n).
  i64 below(i64 n) {
    check(n > 0, ErrKind::Contract, "Rng::below needs n > 0, got ", n);
    uint64_t un = uint64_t(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return i64(v % un);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (i64 i = i64(v.size()) - 1; i > 0; i--) std::swap(v[i], v[size_t(below(i + 1))]);
  }

  uint64_t raw() { return eng_(); }

private:
  std::mt19937_64 eng_;
  double spare_ = 0;
  bool have_spare_ = false;
};

}  // namespace hsinas
