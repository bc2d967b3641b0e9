#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

namespace tmps {

// All randomness in the library flows through this header so that runs are
// reproducible bit for bit. The raw stream is std::mt19937_64, whose output
// sequence the C++ standard specifies exactly; the transforms below avoid
// std::uniform_*_distribution, which the standard leaves implementation
// defined. normal() additionally calls through libm (log/cos/sqrt), so its
// low bits can vary across C libraries; everything else is exact everywhere.

// splitmix64 mixing step, used to derive well-separated sub-seeds.
constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds any number of 64-bit tags into a root seed. Order sensitive, so
// seed_chain(s, a, b) != seed_chain(s, b, a). Used everywhere a component
// needs its own stream that is decorrelated from, but determined by, a
// caller's seed.
template <class... Parts>
constexpr std::uint64_t seed_chain(std::uint64_t seed, Parts... parts) {
  std::uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(parts))), ...);
  return h;
}

// Stream tags for seed_chain. Distinct constants keep derived streams apart
// even when the same root seed feeds several components.
constexpr std::uint64_t kSeedTagSplit = 0x73706c6974ULL;    // dataset split
constexpr std::uint64_t kSeedTagAnchors = 0x616e6368ULL;    // anchor sampler
constexpr std::uint64_t kSeedTagSweepData = 0x64617461ULL;  // per-seed-index dataset
constexpr std::uint64_t kSeedTagSweepCell = 0x63656c6cULL;  // per-cell training

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution. Never returns 1.0.
  double uniform_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on [0, n). Unbiased: raw draws above the largest multiple of n
  // are rejected, so each call may consume more than one raw value.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: range is empty");
    const std::uint64_t n64 = n;
    const std::uint64_t rem = (std::numeric_limits<std::uint64_t>::max() % n64 + 1) % n64;
    const std::uint64_t bound = 0 - rem;  // 2^64 - (2^64 mod n); 0 means no rejection
    std::uint64_t x = next_u64();
    while (bound != 0 && x >= bound) x = next_u64();
    return static_cast<std::size_t>(x % n64);
  }

  // True with probability p. Exact at the endpoints: p=0 never fires and
  // p=1 always does, because uniform_double() < 1.
  bool bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("bernoulli: p outside [0, 1]");
    return uniform_double() < p;
  }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform_double(); }

  // Standard normal via Box-Muller, cosine branch only. Consumes exactly two
  // raw draws per call and keeps no cached state, so the stream position
  // after n calls is always 2n.
  double normal() {
    // Map to (0, 1] so the log argument is never zero.
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace tmps
