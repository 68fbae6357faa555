#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace numvae {

// splitmix64 finalizer; used wherever a well-mixed 64-bit hash of a
// seed tuple is needed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e9b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic per-item seed from a master seed and one or two indices.
// Worker count never affects the derived streams.
inline uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index = 0) {
  return mix64(mix64(master ^ mix64(stream)) ^ index);
}

// Named streams so independent consumers of the same master seed never
// collide.
namespace seed_stream {
constexpr uint64_t kSceneRecord = 0x5ce7e01;
constexpr uint64_t kSplitAssign = 0x5b117;
constexpr uint64_t kRebalance = 0x4eba1;
constexpr uint64_t kEpochShuffle = 0xe90c5;
constexpr uint64_t kAugment = 0xa96e7;
constexpr uint64_t kLatentNoise = 0x1a7e77;
constexpr uint64_t kInit = 0x1717;
constexpr uint64_t kReadout = 0x4ead0;
}  // namespace seed_stream

// Seeded RNG with explicitly specified uniform and normal transforms so
// draws do not depend on the standard library's distribution
// implementations. mt19937_64 itself has a standard-mandated output
// sequence.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(eng_() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; the paired draw is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Worker cap: min(hardware, NUMVAE_THREADS if set). Every parallel loop
// in the project is written so results do not depend on this value.
inline int max_threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("NUMVAE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n;
}

// Parallel loop over [0, n). Each index is processed by exactly one
// worker and writes only to its own outputs, so scheduling cannot change
// results.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
  const int threads = max_threads();
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace numvae
