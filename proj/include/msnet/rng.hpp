#pragma once

#include <array>
#include <cstdint>

namespace msnet {

// xoshiro256** seeded through splitmix64. Fixed generator so that
// initialization, shuffling and synthetic data are reproducible bit-for-bit
// from a single integer seed. Gaussian variates come from the Box-Muller
// transform (two uniforms per draw, cosine branch only) so the generator
// state is the full RNG state; there is no hidden cache to persist.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via z = sqrt(-2 ln(1-u1)) * cos(2 pi u2).
  double normal();

  // Uniform integer in [0, bound) by 128-bit multiply; bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  // Independent child stream derived from the parent's output.
  Rng split();

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace msnet
