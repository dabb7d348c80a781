#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace neomlp {

/// Derives an independent 64-bit seed for a named sub-stream ("init",
/// "sampling", ...) of a run seed.
uint64_t derive_seed(uint64_t seed, std::string_view stream);

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  Rng(uint64_t seed, std::string_view stream) : engine_(derive_seed(seed, stream)) {}

  std::mt19937_64& engine() { return engine_; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  /// Uniform integer in [0, n).
  uint64_t index(uint64_t n) { return std::uniform_int_distribution<uint64_t>(0, n - 1)(engine_); }

  Rng fork(std::string_view stream) { return Rng(derive_seed(engine_(), stream)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace neomlp
