#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dtgan {

// Stream-splitting scheme: every component derives its generator from the
// master seed as mt19937_64(splitmix64(master ^ splitmix64(stream_id))).
// Stream ids are fixed constants, so components are reproducible in
// isolation and compose deterministically.
namespace stream {
inline constexpr uint64_t kNetInit = 1;
inline constexpr uint64_t kDataSampling = 2;
inline constexpr uint64_t kNoise = 3;          // latent z draws
inline constexpr uint64_t kCondition = 4;
inline constexpr uint64_t kInterpolation = 5;  // slerp t draws
inline constexpr uint64_t kDpNoise = 6;        // sanitizer Gaussian noise
inline constexpr uint64_t kShards = 7;
inline constexpr uint64_t kSampling = 8;       // post-training generation
inline constexpr uint64_t kEvalModels = 9;
inline constexpr uint64_t kAttack = 10;
}  // namespace stream

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic random source. Normal deviates use the Marsaglia polar
/// method (fixed algorithm, not the implementation-defined
/// std::normal_distribution), so identical seeds give identical streams on
/// every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(splitmix64(seed)), seed_(seed) {}

  uint64_t seed() const { return seed_; }

  /// Child generator for an independent component stream.
  Rng derive(uint64_t stream_id) const { return Rng(seed_ ^ splitmix64(stream_id)); }

  /// Uniform in [0, 1).
  double uniform() {
    // 53 random bits -> double, the usual construction.
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via the polar method; caches the spare deviate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[uniform_int(i)]);
    }
  }

  /// k distinct indices out of [0, n), Floyd's algorithm, returned sorted.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
    std::vector<size_t> out;
    out.reserve(k);
    for (size_t j = n - k; j < n; ++j) {
      size_t t = static_cast<size_t>(uniform_int(j + 1));
      bool seen = false;
      for (size_t x : out) {
        if (x == t) {
          seen = true;
          break;
        }
      }
      out.push_back(seen ? j : t);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dtgan
