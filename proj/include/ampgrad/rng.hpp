#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ampgrad/common.hpp"

namespace ampgrad {

// SplitMix64: the portable 64-bit generator used everywhere in this library.
// Unlike the std:: engines and distributions, its output is fixed by the
// algorithm alone, so seeded selections, shuffles and weight draws are
// reproducible across compilers and platforms. Streams are derived by mixing
// (seed, domain, stream) through the same permutation, which keeps e.g.
// per-phase amp-layer draws independent of per-epoch shuffle draws.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform integer in [0, bound) by rejection; bound > 0
  uint64_t next_below(uint64_t bound) {
    if (bound == 0) throw ArgumentError("next_below: bound must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % bound;
  }

  // uniform in [lo, hi)
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // standard normal via Box-Muller; second value of the pair is cached
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stream domains. Keeping the domains apart means drawing amp layers in one
// phase never perturbs batch shuffling or weight init in another.
enum class RngDomain : uint64_t {
  kInit = 1,
  kShuffle = 2,
  kAmpSelect = 3,
  kSynthData = 4,
  kSubset = 5,
};

inline uint64_t derive_stream(uint64_t seed, RngDomain domain, uint64_t stream) {
  SplitMix64 mix(seed ^ (static_cast<uint64_t>(domain) * 0xd6e8feb86659fd93ULL));
  mix.next_u64();
  return mix.next_u64() ^ (stream * 0xa3ec647659359acdULL + stream);
}

inline SplitMix64 make_stream(uint64_t seed, RngDomain domain, uint64_t stream = 0) {
  return SplitMix64(derive_stream(seed, domain, stream));
}

// Fisher-Yates permutation of 0..n-1
inline std::vector<size_t> random_permutation(size_t n, SplitMix64& rng) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

// Uniform sample of k items from pool, without replacement (partial
// Fisher-Yates). Order of the result follows the draw.
template <typename T>
std::vector<T> sample_without_replacement(std::vector<T> pool, size_t k, SplitMix64& rng) {
  if (k > pool.size()) throw ArgumentError("sample_without_replacement: k exceeds pool size");
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + static_cast<size_t>(rng.next_below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace ampgrad
