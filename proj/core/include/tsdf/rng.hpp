#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>

namespace tsdf {

// 64-bit FNV-1a followed by a splitmix64 finalizer.
std::uint64_t hash_string(std::string_view text, std::uint64_t basis = 0);

// Seeded random stream. Every stage of a run derives its own stream from the
// global seed and a stage name, so inserting a new stage never shifts the
// draws of an existing one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t seed, std::string_view stage) {
    return Rng(hash_string(stage, seed));
  }

  // Child stream keyed by `stage`, seeded from this stream's next draw.
  Rng fork(std::string_view stage) { return Rng(hash_string(stage, engine_())); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return normal_(engine_); }
  // Inclusive on both ends.
  std::size_t uniform_index(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
  }
  std::uint64_t next_u64() { return engine_(); }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace tsdf
