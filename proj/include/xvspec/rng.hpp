#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

namespace xvspec {

using TokenId = std::int32_t;

/// Seeded generator. Draws are derived from the raw mt19937_64 output so the
/// same seed yields the same stream with any standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) built from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 mix of (seed, stream); used to give every subsystem its own seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace xvspec
