#include "css/rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace css {

std::uint64_t Rng::mix(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ull;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebull;
  z ^= z >> 31;
  return z;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  counter_ = mix(seed + 0x9e3779b97f4a7c15ull);
  // Distinct odd increments give distinct full-period streams.
  increment_ = (mix(stream ^ 0xda3e39cb94b95bdbull) << 1) | 1ull;
}

Rng Rng::split(std::uint64_t index) const {
  Rng child;
  child.counter_ = mix(counter_ ^ mix(index + 0x165667b19e3779f9ull));
  child.increment_ = (mix(increment_ + index * 0x9e3779b97f4a7c15ull) << 1) | 1ull;
  return child;
}

std::uint64_t Rng::next_u64() {
  counter_ += increment_;
  return mix(counter_);
}

double Rng::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_gaussian() {
  // u1 in (0,1] so log(u1) is finite.
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
  // Multiply-shift range reduction; bias is negligible for desk-scale n.
  unsigned __int128 wide = static_cast<unsigned __int128>(next_u64());
  return static_cast<std::uint64_t>((wide * n) >> 64);
}

double Rng::next_symmetric(double limit) {
  return (2.0 * next_uniform() - 1.0) * limit;
}

std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a(const char* cstr) { return fnv1a(cstr, std::strlen(cstr)); }

}  // namespace css
