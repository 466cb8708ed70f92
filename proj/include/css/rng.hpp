#pragma once

#include <cstdint>

namespace css {

/// Counter-based splittable generator. Each draw advances a 64-bit counter by a
/// stream-specific odd increment and mixes it (SplitMix64 finalizer), so a stream
/// is fully determined by (seed, split path) and children drawn via split() are
/// decorrelated from the parent regardless of how many values either produces.
/// Not cryptographic. Gaussian draws use Box-Muller on raw uniforms rather than
/// std::normal_distribution, which is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Independent child stream; deterministic in (parent state at creation, index).
  Rng split(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double next_uniform();
  /// Standard normal via Box-Muller; consumes two uniforms per call.
  double next_gaussian();
  /// Uniform integer in [0, n), n >= 1.
  std::uint64_t next_below(std::uint64_t n);
  /// Uniform on [-limit, limit].
  double next_symmetric(double limit);

 private:
  Rng() = default;
  static std::uint64_t mix(std::uint64_t z);

  std::uint64_t counter_ = 0;
  std::uint64_t increment_ = 0;
};

/// FNV-1a over a byte string; used to derive per-name parameter streams and
/// content digests for on-disk files.
std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a(const char* cstr);

}  // namespace css
