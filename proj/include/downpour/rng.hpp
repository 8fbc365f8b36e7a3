#pragma once

#include <cstdint>
#include <random>

namespace downpour {

// Seedable generator with a platform-independent stream. mt19937_64 output is
// pinned by the standard; the uniform mappings below avoid std distributions,
// whose draw sequences are implementation defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  // [0, 1), 53-bit resolution; one engine call per draw
  double uniform() { return (eng_() >> 11) * 0x1.0p-53; }

  // [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [-1, 1)
  double symmetric() { return 2.0 * uniform() - 1.0; }

  // {0, ..., n-1}; one engine call
  uint64_t uniform_index(uint64_t n) { return (uint64_t)(uniform() * (double)n) % n; }

  uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace downpour
