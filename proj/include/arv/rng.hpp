#pragma once

#include <cstdint>
#include <vector>

namespace arv {

// splitmix64 finalizer; also used to derive child stream seeds.
uint64_t splitmix64(uint64_t& state);
uint64_t mix64(uint64_t x);

// xoshiro256** seeded via splitmix64. All sampling helpers are implemented
// by hand (no <random> distributions) so sequences are identical across
// platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform integer in [0, bound), bias-free via rejection. bound > 0.
  uint64_t below(uint64_t bound);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  // Standard normal via Box-Muller (cached spare).
  double normal();

  // Normal truncated to [-2, 2] standard deviations, resampled on reject.
  double truncated_normal();

  // Deterministic child stream: a function of this stream's seed and the tag
  // only, independent of how much the parent has been consumed.
  Rng fork(uint64_t tag) const;

  uint64_t seed() const { return seed_; }

  // Partial Fisher-Yates: draw k distinct indices uniformly from [0, n).
  std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t seed_;
  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace arv
