#pragma once

#include <cstdint>

namespace cigar {

// xoshiro256++ seeded via splitmix64. Self-contained so that sampled batches
// are reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Unbiased integer in [0, n). n must be > 0.
  uint64_t uniform_below(uint64_t n) {
    const uint64_t threshold = -n % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  uint32_t uniform_u32(uint32_t n) { return static_cast<uint32_t>(uniform_below(n)); }

  // Double in [0, 1) with 53 bits of randomness.
  double uniform_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform_double(); }

  // Derives an independent deterministic stream (e.g. for a sampler thread).
  Rng fork(uint64_t stream) {
    uint64_t x = next_u64() ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return Rng(splitmix64(x));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t state_[4];
};

}  // namespace cigar
