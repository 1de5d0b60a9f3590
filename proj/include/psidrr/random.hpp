#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace psidrr {

/// Seedable random stream with a fully specified output sequence.
///
/// Wraps std::mt19937_64 (whose output is fixed by the standard) and derives
/// doubles and bounded integers with explicit arithmetic instead of the
/// implementation-defined std distributions, so sequences are identical
/// across standard libraries.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Order-sensitive combination of several values into one seed.
std::uint64_t combine_seeds(std::initializer_list<std::uint64_t> parts);

/// FNV-1a over the bytes of s; stable across platforms.
std::uint64_t hash_string(std::string_view s);

}  // namespace psidrr
