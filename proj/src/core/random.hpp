#pragma once

#include <cstdint>
#include <vector>

namespace vib {

/// Counter-based random stream: output n is a pure function of (key, n), so
/// a stream can be replayed from its seed and split into disjoint children.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed = 0) : seed_(seed), key_(mix(seed ^ 0x9e3779b97f4a7c15ULL)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Box-Muller over two uniforms; the second variate of each pair is kept.
  double standard_normal();
  double normal(double mean, double stddev) { return mean + stddev * standard_normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  void fill_normal(std::vector<double>& out);
  std::vector<std::size_t> permutation(std::size_t n);

  /// Independent child stream; advances this stream by one draw.
  RandomSource split();

  static std::uint64_t mix(std::uint64_t z);

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vib
