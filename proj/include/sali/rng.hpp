#pragma once

#include <cmath>
#include <cstdint>

namespace sali {

// Deterministic splitmix64 generator. Used everywhere instead of <random>
// so that runs are bit-reproducible across standard libraries.
//
// Stream derivation: child(i) seeds a new generator with
// next_of(state ^ (golden * (i + 1))), which is how per-episode and
// per-world streams are split from a base seed.
class Rng {
public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  Rng child(uint64_t stream) const {
    Rng r(state_ ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
    r.next_u64();
    return r;
  }

  uint64_t state() const { return state_; }

private:
  uint64_t state_;
};

}  // namespace sali
