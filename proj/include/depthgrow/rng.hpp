#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace depthgrow {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Sequential pseudo-random stream. Unlike the <random> distributions, every
// draw is a fixed function of the seed, so runs are bit-reproducible across
// standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    counter_ += 1;
    return splitmix64(state_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>((static_cast<unsigned __int128>(next_u64()) * span) >> 64);
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Keyed counter stream: element i of stream (seed, step, op) is a pure
// function of its arguments. Dropout masks use this so a stage-2 run draws
// the same masks no matter what preceded it in the process.
inline uint64_t counter_key(uint64_t seed, uint64_t step, uint64_t op) {
  uint64_t k = splitmix64(seed ^ 0xD1B54A32D192ED03ULL);
  k = splitmix64(k ^ (step * 0xA24BAED4963EE407ULL));
  k = splitmix64(k ^ (op * 0x9E3779B97F4A7C15ULL));
  return k;
}

inline double counter_uniform(uint64_t key, uint64_t i) {
  uint64_t x = splitmix64(key ^ ((i + 1) * 0xD6E8FEB86659FD93ULL));
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

// FNV-1a over raw bytes; used for checkpoint content hashes and freeze audits.
inline uint64_t fnv1a64(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace depthgrow
