#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <random>

namespace graphnav {

// splitmix64; used to derive independent stream seeds from (seed, tags).
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t seed_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

template <typename... Rest>
uint64_t seed_combine(uint64_t a, uint64_t b, Rest... rest) {
  return seed_combine(seed_combine(a, b), static_cast<uint64_t>(rest)...);
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// uniform/normal conversions are done by hand so streams are identical on
// every platform (std::uniform_real_distribution is not portable).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw std::invalid_argument("Rng::uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Lemire's multiply-shift; unbiased enough for simulation use and
    // deterministic everywhere.
    const auto wide = static_cast<unsigned __int128>(u64()) * span;
    return lo + static_cast<int64_t>(static_cast<uint64_t>(wide >> 64));
  }

  // Standard normal via Box-Muller. Draws two uniforms per call and keeps no
  // spare, so the stream position is a simple function of the call count.
  double normal() {
    const double u1 = (static_cast<double>(u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: bad state string");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace graphnav
