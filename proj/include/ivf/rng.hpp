#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ivf {

/// Identity of the generator family, pinned into plan file headers.
inline constexpr std::string_view kPrngName = "mt19937_64/seed_seq/fnv1a64";

/// Reproducible random stream keyed by (seed, purpose, index).
///
/// Raw output comes from std::mt19937_64 seeded through std::seed_seq, both of
/// which are fully specified by the standard. Bounded integers, uniforms and
/// normals are derived here rather than through <random> distributions, whose
/// algorithms are implementation-defined.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n), unbiased. n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view s);

}  // namespace ivf
