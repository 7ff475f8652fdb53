#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dsi {

// ----------------------------------------------------------------------------
// Errors
// ----------------------------------------------------------------------------

// Invalid shapes, roles, layouts, files, parses. CLI maps this to exit 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pluggable backend failed. Carries the pipeline stage that failed.
// CLI maps this to exit 3.
class ClientError : public std::runtime_error {
 public:
  ClientError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ----------------------------------------------------------------------------
// Mat: dense row-major double matrix
// ----------------------------------------------------------------------------

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool empty() const noexcept { return rows == 0 || cols == 0; }
  bool same_shape(const Mat& o) const noexcept { return rows == o.rows && cols == o.cols; }
};

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw InputError("matmul: inner dimensions differ");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

// a (m x d) times b^T (d x n) without materializing the transpose
inline Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) throw InputError("matmul_nt: inner dimensions differ");
  Mat c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  return c;
}

inline double l2_norm(const Mat& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return std::sqrt(s);
}

inline bool all_finite(const Mat& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// ----------------------------------------------------------------------------
// Hashing: FNV-1a 64, used for digests and stub seeding
// ----------------------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a(std::uint64_t h, std::string_view s) {
  return fnv1a(h, s.data(), s.size());
}

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv1a(h, b, 8);
}

inline std::uint64_t fnv1a(std::uint64_t h, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  __builtin_memcpy(&bits, &v, 8);
  return fnv1a(h, bits);
}

// ----------------------------------------------------------------------------
// Rng: splitmix64 stream with pinned uniform/normal mappings, so identical
// seeds give identical values on every build
// ----------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller; one value per call, cache holds the pair's second half
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  void fill_normal(Mat& m, double scale = 1.0) {
    for (double& v : m.data) v = scale * normal();
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ----------------------------------------------------------------------------
// Pairwise reduction in index order; the fixed summation tree keeps batch
// reductions reproducible regardless of evaluation order
// ----------------------------------------------------------------------------

template <typename T, typename Add>
T pairwise_reduce(const std::vector<T>& items, std::size_t lo, std::size_t hi, Add add) {
  if (hi - lo == 1) return items[lo];
  const std::size_t mid = lo + (hi - lo + 1) / 2;
  return add(pairwise_reduce(items, lo, mid, add), pairwise_reduce(items, mid, hi, add));
}

template <typename T, typename Add>
T pairwise_reduce(const std::vector<T>& items, Add add) {
  if (items.empty()) throw InputError("pairwise_reduce: empty input");
  return pairwise_reduce(items, 0, items.size(), add);
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace dsi
