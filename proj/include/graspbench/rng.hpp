#pragma once

#include <cstdint>
#include <cmath>
#include <initializer_list>

namespace graspbench {

// splitmix64 step. Fully specified, identical on every platform; used both as
// the generator and as the stream-derivation hash so that per-scene /
// per-object streams never depend on generation order.
inline uint64_t splitmix64_next(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a list of words into one seed, e.g. mix_seed({seed, scene_idx, tag}).
inline uint64_t mix_seed(std::initializer_list<uint64_t> words) {
  uint64_t s = 0x6a09e667f3bcc909ULL;
  for (uint64_t w : words) {
    s ^= w + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    splitmix64_next(s);
  }
  return s;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    int v = static_cast<int>(uniform() * static_cast<double>(n));
    return v < n ? v : n - 1;
  }

  // Box-Muller without caching: every call consumes exactly two uniforms,
  // which keeps replayed streams aligned regardless of call history.
  double normal(double mu, double sigma) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double z = r * std::cos(6.283185307179586476925286766559 * u2);
    return mu + sigma * z;
  }

 private:
  uint64_t state_;
};

}  // namespace graspbench
