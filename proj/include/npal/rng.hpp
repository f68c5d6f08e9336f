#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace npal {

// The one random source used across the library. The engine output of
// std::mt19937_64 is fixed by the standard, but the std distributions are
// not, so bounded draws are done here by rejection. Any change to how
// values are derived must bump kName, since replayed histories depend on it.
class Rng {
 public:
  static constexpr std::string_view kName = "mt19937_64/rejection-v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // Uniform real in [0, 1) with 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool chance(double p) { return uniform() < p; }

  // Derives an independent child stream; `salt` distinguishes siblings.
  Rng fork(std::uint64_t salt) {
    std::uint64_t z = next() + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace npal
