#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace delib {

/// Portable random stream: std::mt19937_64 (bit-exact across conforming standard
/// libraries) with explicit conversions to doubles and integers, so that no
/// implementation-defined std distribution is involved. Sub-streams are keyed
/// with SplitMix64 so results do not depend on evaluation order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// SplitMix64 finalizer applied to seed ^ f(stream).
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);
  /// Generator for the sub-stream addressed by `path` under `seed`.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in (0, 1).
  double uniform_open();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard Gumbel draw: -log(-log(u)).
  double gumbel();

 private:
  std::mt19937_64 engine_;
};

}  // namespace delib
