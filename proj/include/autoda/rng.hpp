#ifndef AUTODA_RNG_HPP
#define AUTODA_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace autoda {

// splitmix64 finalizer. Used to derive independent stream seeds so that two
// consumers (candidates, images, generations) never share a draw sequence.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t h = mix64(base);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return h;
}

// Seeded random stream. All distributions are derived from the mt19937_64
// sequence via fixed arithmetic (no std::*_distribution), so identical seeds
// reproduce identical draws on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller. Two uniforms per draw, nothing cached,
  // so the stream position after n draws is always 2n.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  // Uniform index in [0, n). n must be >= 1.
  std::size_t uniform_index(std::size_t n) {
    auto idx = static_cast<std::size_t>(uniform01() * static_cast<double>(n));
    return idx >= n ? n - 1 : idx;
  }

  void fill_normal(std::vector<double>& out) {
    for (double& v : out) v = normal();
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace autoda

#endif  // AUTODA_RNG_HPP
