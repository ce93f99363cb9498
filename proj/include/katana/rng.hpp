#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>

namespace katana {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline uint64_t hash_u64(uint64_t x) {
  uint64_t s = x;
  return splitmix64(s);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  uint64_t s = a + 0x9E3779B97F4A7C15ull * (b + 0x632BE59BD9B4E019ull);
  splitmix64(s);
  return splitmix64(s);
}

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

// xoshiro256++ with counter-derived substreams. All randomness in the project
// flows through this generator so results do not depend on the platform's
// standard-library distributions.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : s_) w = splitmix64(s);
  }

  // Substream `stream_id` of a root seed. Streams are independent of the
  // order in which they are consumed, which makes parallel generation
  // bit-identical to sequential generation.
  static Rng stream(uint64_t root, uint64_t stream_id) { return Rng(hash_combine(root, stream_id)); }

  uint64_t next() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Exact at collapsed intervals: uniform(v, v) == v.
  float uniform_float(float lo, float hi) { return lo + static_cast<float>(uniform()) * (hi - lo); }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next() % static_cast<uint64_t>(hi - lo + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller without cached state.
  double normal() {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<long long>(last - first);
    for (long long i = n - 1; i > 0; --i) {
      const int j = uniform_int(0, static_cast<int>(i));
      std::swap(first[i], first[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace katana
