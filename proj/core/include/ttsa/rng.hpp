#pragma once

// Counter-based pseudo-random streams.
//
// Every value is a pure function of (key, counter), so a stream can be
// reproduced bit-for-bit from its key alone, and independent streams are
// derived by splitting a seed rather than by jumping ahead.  Replica k of an
// ensemble always runs on split(seed, k) no matter how replicas are scheduled
// across threads.

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace ttsa::rng {

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
inline constexpr std::uint64_t kSplitSalt = 0xD1B54A32D192ED03ull;

// Finalizer from splitmix64; bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Derives the key of sub-stream k of `seed`.  Uses a different additive salt
// than the in-stream counter walk so split keys never alias stream outputs.
inline std::uint64_t split(std::uint64_t seed, std::uint64_t k) {
  return mix64((seed ^ kSplitSalt) + kGamma * (k + 1));
}

class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}

  // i-th output is mix64(key + gamma*i), i starting at 1: the splitmix64
  // sequence for state = key.
  std::uint64_t next_u64() {
    ++n_;
    return mix64(key_ + kGamma * n_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe to pass to log().
  double next_double_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two uniforms per pair and
  // caches the second value.
  double next_gaussian() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = next_double_pos();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    have_cached_ = true;
    return r * std::cos(theta);
  }

  Eigen::VectorXd gaussian_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = next_gaussian();
    return v;
  }

  Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    // Row-major fill so the draw order matches the serialized entry order.
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = next_gaussian();
    return m;
  }

  // Uniform on the closed ball of the given radius.
  Eigen::VectorXd uniform_in_ball(Eigen::Index n, double radius) {
    Eigen::VectorXd g = gaussian_vector(n);
    const double norm = g.norm();
    const double u = next_double_pos();
    const double scale =
        norm > 0.0 ? radius * std::pow(u, 1.0 / static_cast<double>(n)) / norm : 0.0;
    return scale * g;
  }

  // Index in [0, weights.size()) with the given (normalized) weights.
  int next_categorical(const std::vector<double>& cum_weights) {
    const double u = next_double();
    const int n = static_cast<int>(cum_weights.size());
    for (int i = 0; i < n - 1; ++i) {
      if (u < cum_weights[static_cast<std::size_t>(i)]) return i;
    }
    return n - 1;
  }

 private:
  std::uint64_t key_;
  std::uint64_t n_ = 0;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace ttsa::rng
