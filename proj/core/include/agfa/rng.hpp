#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace agfa {

// Deterministic random source. Only the raw mt19937_64 stream is consumed;
// value shaping (uniform doubles, Box-Muller normals, bounded integers) is
// done by hand so sequences are identical across standard library
// implementations. All reproducibility guarantees in this project rest on
// this class.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of randomness.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  int64_t uniform_int(int64_t lo, int64_t hi);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent stream id from a parent seed and a salt
  // (splitmix64 finalizer). Used for per-sample / per-epoch streams.
  static uint64_t mix(uint64_t seed, uint64_t salt);

 private:
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace agfa
