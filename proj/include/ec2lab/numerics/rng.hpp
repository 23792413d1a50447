#pragma once

#include <cstdint>
#include <string_view>

namespace ec2lab::num {

// Counter-based splittable PRNG. One root generator per run; components get
// their own streams via split(), so e.g. ablations that share a data stream
// consume identical draws regardless of what the other components do.
// All transforms (uniform, normal, gumbel) are hand-rolled so results are
// bit-reproducible across platforms and standard-library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x6A09E667F3BCC909ULL)) {}

  uint64_t next_u64() {
    counter_ += 1;
    return mix(key_ + 0x9E3779B97F4A7C15ULL * counter_);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1]; safe to take log of.
  double uniform_open() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without caching the second value.
  double normal();

  // Standard Gumbel(0,1): -log(-log(U)).
  double gumbel();

  // Uniform integer in [0, n); n must be positive.
  int uniform_int(int n);

  // Child stream; independent of draws made on the parent so far.
  Rng split(std::string_view label) const;
  Rng split(uint64_t index) const;

  // A 53-bit value usable as a JSON-storable seed.
  uint64_t seed53() { return next_u64() & ((uint64_t{1} << 53) - 1); }

 private:
  Rng(uint64_t key, int) : key_(key) {}

  static uint64_t mix(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace ec2lab::num
