#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "solstep/common.hpp"

namespace solstep {

inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// splitmix64 generator. std:: distributions are implementation-defined, which
// would break byte-identical artifacts across library versions; everything
// random in this project flows through this class.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return mix64(state_ += 0x9e3779b97f4a7c15ULL); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased enough for shuffles and index picks
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // Box-Muller, one draw per call so the stream position is a pure function
  // of call count
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // independent stream derived from this seed and a salt; does not advance
  // the parent
  Rng fork(uint64_t salt) const { return Rng(mix64(state_ ^ mix64(salt + 0x632be59bd9b4e019ULL))); }

 private:
  uint64_t state_;
};

}  // namespace solstep
