// Counter-based deterministic RNG. Streams are keyed by (seed, ids...) so
// sampling is reproducible and independent of evaluation order under
// parallelism.
#pragma once

#include <cstdint>

namespace dart {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

class Prng {
 public:
  explicit Prng(std::uint64_t seed) : state_(seed) { (void)next(); }

  // Builds an independent stream from a seed and up to three stream ids.
  static Prng keyed(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = detail::splitmix64(s);
    s = h ^ (a + 0x9e3779b97f4a7c15ull);
    h = detail::splitmix64(s);
    s = h ^ (b + 0xc2b2ae3d27d4eb4full);
    h = detail::splitmix64(s);
    s = h ^ (c + 0x165667b19e3779f9ull);
    return Prng(s);
  }

  std::uint64_t next() { return detail::splitmix64(state_); }

  // Uniform in [0, 1) with 53-bit resolution.
  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next() % n; }

 private:
  std::uint64_t state_;
};

}  // namespace dart
