#pragma once

#include <cstdint>
#include <random>

namespace lagid {

/// 64-bit Mersenne twister with a platform-independent mapping to doubles
/// (std::uniform_real_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [a, b).
  double uniform(double a, double b) {
    const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return a + (b - a) * u;
  }

  std::uint64_t next() { return engine_(); }

  /// Independent stream for sub-task `index`.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lagid
