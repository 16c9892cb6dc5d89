#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tokenlab/tensor.hpp"

namespace tokenlab {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Seeded stream addressed by (root seed, path). Streams forked from the same
// root with distinct paths are independent of evaluation order and threads.
class RngStream {
 public:
  explicit RngStream(std::uint64_t root_seed, std::vector<std::uint64_t> path = {})
      : root_(root_seed), path_(std::move(path)) {
    std::uint64_t key = splitmix64(root_ ^ 0xA5A5A5A55A5A5A5Aull);
    for (std::uint64_t p : path_) key = splitmix64(key ^ splitmix64(p ^ 0xD1B54A32D192ED03ull));
    state_ = key;
  }

  RngStream fork(std::uint64_t index) const {
    std::vector<std::uint64_t> p = path_;
    p.push_back(index);
    return RngStream(root_, std::move(p));
  }

  std::uint64_t root_seed() const { return root_; }
  const std::vector<std::uint64_t>& path() const { return path_; }

  std::uint64_t next_u64() {
    std::uint64_t out = splitmix64(state_);
    state_ += 0x9E3779B97F4A7C15ull;
    return out;
  }

  // uniform in [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    // Box-Muller; u clamped away from 0 so log stays finite
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  Tensor normal_tensor(Shape shape) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = normal();
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = uniform(lo, hi);
    return t;
  }

  // Fisher-Yates permutation of [0, n)
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t root_;
  std::vector<std::uint64_t> path_;
  std::uint64_t state_ = 0;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace tokenlab
