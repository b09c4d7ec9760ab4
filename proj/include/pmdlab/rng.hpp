#pragma once

#include <cstdint>

namespace pmdlab {

// Counter-based Philox4x32-10 stream (Salmon et al., "Parallel random numbers:
// as easy as 1, 2, 3").  A stream is fully identified by (seed, stream); the
// k-th draw depends only on that identity, so independent streams may be
// consumed in any order or from any thread with identical results.
class Philox {
 public:
  explicit Philox(uint64_t seed, uint64_t stream = 0);

  uint32_t next_u32();
  uint64_t next_u64();
  // Uniform on [0, 1), 53-bit resolution.
  double next_double();
  // Uniform integer in [0, n); n must be positive.
  int64_t next_below(int64_t n);
  // Standard normal via Box-Muller; values are produced in pairs and cached.
  double next_gaussian();

  // Raw block function, exposed for known-answer tests.
  static void block(const uint32_t key[2], const uint32_t ctr[4], uint32_t out[4]);

 private:
  void refill();

  uint32_t key_[2];
  uint32_t ctr_[4];
  uint32_t buf_[4];
  int pos_;
  double cached_gauss_ = 0.0;
  bool has_cached_gauss_ = false;
};

// Deterministic combiner for deriving sub-stream identifiers (splitmix64 mix).
uint64_t mix_seed(uint64_t a, uint64_t b);

// Stream-id layout used across the library: kind in the top byte, then a
// 24-bit generation/epoch and a 24-bit index.  Keeps every consumer of a seed
// on a provably disjoint stream.
constexpr uint64_t stream_id(uint64_t kind, uint64_t epoch, uint64_t index) {
  return (kind << 48) | ((epoch & 0xffffff) << 24) | (index & 0xffffff);
}

namespace streams {
constexpr uint64_t kRolloutEnv = 1;
constexpr uint64_t kGridSample = 2;
constexpr uint64_t kEsNoise = 3;
constexpr uint64_t kEsTask = 4;
constexpr uint64_t kEsEval = 5;
constexpr uint64_t kCmaNoise = 6;
constexpr uint64_t kCmaTask = 7;
constexpr uint64_t kEvalTasks = 8;
}  // namespace streams

}  // namespace pmdlab
