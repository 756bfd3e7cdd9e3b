#pragma once

// Counter-based random streams (Philox 4x32-10, Salmon et al. 2011). Every
// draw is a pure function of (seed, stream, block counter), so path i sees the
// same noise no matter how paths are partitioned across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "pics/common.hpp"

namespace pics {

struct Philox4x32 {
  static constexpr uint32_t kMul0 = 0xD2511F53u;
  static constexpr uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<uint32_t, 4> block(std::array<uint32_t, 2> key,
                                       std::array<uint32_t, 4> ctr) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const uint64_t p0 = uint64_t(kMul0) * ctr[0];
      const uint64_t p1 = uint64_t(kMul1) * ctr[2];
      ctr = {uint32_t(p1 >> 32) ^ ctr[1] ^ key[0], uint32_t(p1),
             uint32_t(p0 >> 32) ^ ctr[3] ^ key[1], uint32_t(p0)};
    }
    return ctr;
  }
};

// One stream of standard normals; two per Philox block via Box-Muller.
class NormalStream {
 public:
  NormalStream(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const auto out = Philox4x32::block(
        {uint32_t(seed_), uint32_t(seed_ >> 32)},
        {uint32_t(block_), uint32_t(block_ >> 32), uint32_t(stream_),
         uint32_t(stream_ >> 32)});
    ++block_;
    const double u1 = 1.0 - to_unit(out[0], out[1]);  // (0, 1]: log-safe
    const double u2 = to_unit(out[2], out[3]);        // [0, 1)
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  void fill(Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = next();
  }

  Vector next_vector(int n) {
    Vector v(n);
    fill(v);
    return v;
  }

 private:
  static double to_unit(uint32_t lo, uint32_t hi) {
    const uint64_t u = (uint64_t(hi) << 32) | lo;
    return double(u >> 11) * 0x1.0p-53;
  }

  uint64_t seed_;
  uint64_t stream_;
  uint64_t block_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64-style finalizer for deriving decorrelated sub-seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace pics
