#pragma once

// Seeded, splittable random streams. Every sampling routine in the library
// draws from a RandomStream derived from (user seed, purpose tag, indices),
// so independent pieces of work (environments, sweep cells, shuffles) get
// independent, reproducible streams that are safe to consume in parallel.
//
// All floating-point draws are produced from raw engine output here rather
// than through std::*_distribution, so a given seed yields the same sample
// sequence on every platform with the same libm.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace isr {

// SplitMix64 step; used only to mix seeds and tags into stream keys.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Folds a base seed and a path of tags/indices into one stream key.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = base;
  std::uint64_t key = splitmix64(state);
  for (std::uint64_t p : path) {
    state ^= p + 0x9E3779B97F4A7C15ULL + (state << 6) + (state >> 2);
    key ^= splitmix64(state);
  }
  return key;
}

// Stream tags. Keeping them in one place avoids accidental stream collisions
// between subsystems that share a user-facing seed.
namespace stream_tag {
inline constexpr std::uint64_t kEnvironmentSample = 0x01;
inline constexpr std::uint64_t kTransform = 0x02;
inline constexpr std::uint64_t kEnvParams = 0x03;
inline constexpr std::uint64_t kTrainSplit = 0x04;
inline constexpr std::uint64_t kTestSplit = 0x05;
inline constexpr std::uint64_t kShuffle = 0x06;
inline constexpr std::uint64_t kLabelMask = 0x07;
inline constexpr std::uint64_t kPlanted = 0x08;
}  // namespace stream_tag

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  static RandomStream derived(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    return RandomStream(derive_seed(base, path));
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; the spare value is cached so a stream
  // yields a fixed sequence regardless of how draws are grouped.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal();
    return m;
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Uniform integer in [0, n) by rejection; unbiased and portable.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RandomStream::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -uint64_t(std::numeric_limits<std::uint64_t>::max() % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  // k distinct indices sampled from {0, ..., n-1}, in random order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    std::vector<std::size_t> p = permutation(n);
    p.resize(k);
    return p;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace isr
