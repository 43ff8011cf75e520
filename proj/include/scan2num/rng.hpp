#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "scan2num/common.hpp"

namespace scan2num {

// Every random decision in the pipeline flows through this wrapper. mt19937_64
// output is pinned by the C++ standard, and the mappings below are written out
// explicitly instead of using std::*_distribution (whose algorithms are
// implementation-defined), so runs reproduce bit-for-bit across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0,1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, cosine branch, one fresh draw pair per call
  double normal() {
    double u1 = 1.0 - uniform();  // (0,1], keeps log() finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // unbiased integer in [0,n) by rejection
  uint64_t below(uint64_t n) {
    if (n == 0) throw NumericError("Rng::below: n must be positive");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  bool coin() { return uniform() < 0.5; }

 private:
  std::mt19937_64 gen_;
};

// Stable sub-stream seeding: hash of (base seed, purpose tag, indices).
// FNV-1a over the bytes, then a splitmix64 finalizer to spread low-entropy
// inputs across the whole state space.
inline uint64_t derive_seed(uint64_t base, std::string_view purpose, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix_byte = [&h](uint8_t byte) {
    h ^= byte;
    h *= 0x100000001b3ull;
  };
  auto mix_u64 = [&](uint64_t v) {
    for (int i = 0; i < 8; ++i) mix_byte(static_cast<uint8_t>(v >> (8 * i)));
  };
  mix_u64(base);
  for (char c : purpose) mix_byte(static_cast<uint8_t>(c));
  mix_u64(a);
  mix_u64(b);
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

}  // namespace scan2num
