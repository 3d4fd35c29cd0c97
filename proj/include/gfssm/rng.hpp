#pragma once

#include <cmath>
#include <cstdint>

namespace gfssm {

// xoshiro256++ 1.0 (Blackman & Vigna), seeded through splitmix64. Every
// random value in the project flows from this generator so that instances can
// be reproduced exactly from the documented algorithm:
//
//   state[i]    = splitmix64_next(seed), four successive outputs
//   next()      = rotl(s0 + s3, 23) + s0, then the xoshiro256 state update
//   uniform01() = (next() >> 11) * 2^-53                    in [0, 1)
//   uniform(lo, hi) = lo + uniform01() * (hi - lo)
//   uniform_pos01() = 1 - uniform01()                       in (0, 1]
//   uniform_int(n)  = next() % n
//   normal()    = Box-Muller on (1 - uniform01(), uniform01())
//
// Per-instance streams are derived as Rng(master_seed + instance_index) with
// 64-bit wraparound.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64_next(x);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  double uniform01() { return (next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  // Uniform in (0, 1]; used for decay scalars, which may touch 1 but not 0.
  double uniform_pos01() { return 1.0 - uniform01(); }

  std::uint64_t uniform_int(std::uint64_t n) { return next() % n; }

  double normal() {
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64_next(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_[4];
};

}  // namespace gfssm
