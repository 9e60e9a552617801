#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace msmemu {

// Counter-based generator: every variate is a pure function of (key, counter),
// so draws are reproducible under any execution order or thread count.

inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t hash64(std::initializer_list<uint64_t> words) {
  uint64_t h = 0x243f6a8885a308d3ull;
  for (uint64_t w : words) h = mix64(h ^ w);
  return h;
}

struct RngKey {
  uint64_t state = 0;

  RngKey derive(uint64_t word) const { return RngKey{mix64(state ^ mix64(word))}; }

  uint64_t bits(uint64_t counter) const { return mix64(state ^ mix64(counter ^ 0x5851f42d4c957f2dull)); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform(uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; one variate per counter.
  double normal(uint64_t counter) const {
    double u1 = 1.0 - uniform(counter);            // (0, 1], keeps log finite
    double u2 = derive(0x6e6f726du).uniform(counter);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

// Sequential convenience wrapper around a fixed key.
struct CounterRng {
  RngKey key;
  uint64_t counter = 0;

  explicit CounterRng(RngKey k) : key(k) {}
  CounterRng(uint64_t seed, std::initializer_list<uint64_t> stream) : key{hash64(stream) ^ mix64(seed)} {
    key.state = mix64(key.state);
  }

  double uniform() { return key.uniform(counter++); }
  double normal() { return key.normal(counter++); }

  // Uniform integer in [0, n) by rejection-free scaling (n << 2^53).
  uint64_t uniform_index(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
  }
};

}  // namespace msmemu
