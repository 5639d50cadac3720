#pragma once

#include <cstdint>
#include <random>

namespace stemvq {

// Seeded random stream with platform-independent conversions; the standard
// distributions are implementation-defined, so they are not used where
// outputs must be reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // [0, n)
  std::uint64_t below(std::uint64_t n);
  double normal();

  // Independent child stream, e.g. one per song.
  Rng fork(std::uint64_t salt) { return Rng(mix(next_u64() ^ mix(salt))); }

  static std::uint64_t mix(std::uint64_t x);

 private:
  std::mt19937_64 engine_;
};

}  // namespace stemvq
