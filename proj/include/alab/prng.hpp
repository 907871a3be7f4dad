#pragma once

#include <cstdint>

namespace alab {

// splitmix64 finalizer; also used on its own to derive sub-seeds.
constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// xorshift64* seeded through splitmix64. The integer stream is identical on
// every platform; uniform() is exact, normal() goes through libm.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) {
    std::uint64_t s = seed;
    state_ = splitmix64(s);
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
  }

  std::uint64_t next_u64() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  // [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0, n); n must be > 0. Slight modulo bias is irrelevant at our sizes.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller, one value per call (the pair's second half is discarded).
  double normal();

  // Derives an independent stream for a named purpose.
  Prng fork(std::uint64_t salt) {
    std::uint64_t s = next_u64() ^ (salt * 0xD1B54A32D192ED03ULL);
    return Prng(splitmix64(s));
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace alab
