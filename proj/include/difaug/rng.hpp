#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace difaug {

// SplitMix64 finalizer over (base, index); used to derive independent
// per-item and per-purpose seeds from one master seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Seeded random stream with serializable state.
///
/// Distribution code is written out here rather than taken from <random> so
/// that draws are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [0, max_inclusive], unbiased.
  std::uint64_t uniform_int(std::uint64_t max_inclusive);
  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  std::string state() const;
  void set_state(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b);

 private:
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace difaug
