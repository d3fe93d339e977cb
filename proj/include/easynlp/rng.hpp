#pragma once

#include <cmath>
#include <cstdint>

namespace easynlp {

/// xorshift64* generator. Every seeded operation in the toolkit draws from
/// this so masked corpora, shuffles and initializations are reproducible
/// across platforms.
///
///   state_0 = seed XOR 0x9E3779B97F4A7C15   (replaced by that constant if 0)
///   x ^= x >> 12; x ^= x << 25; x ^= x >> 27; out = x * 0x2545F4914F6CDD1D
///
/// uniform() takes the top 53 bits of `out` scaled by 2^-53, so it lies in
/// [0, 1). uniform_int(n) is `out % n`.
class Rng {
 public:
  static constexpr std::uint64_t kSeedMix = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed) : state_(seed ^ kSeedMix) {
    if (state_ == 0) state_ = kSeedMix;
  }

  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::uint64_t uniform_int(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  // Box-Muller; consumes two draws per call.
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Normal(0, stddev) resampled until |z| <= 2 stddev.
  double truncated_normal(double stddev) {
    for (;;) {
      const double z = normal();
      if (std::fabs(z) <= 2.0) return z * stddev;
    }
  }

  // Derive an independent stream, e.g. per epoch.
  Rng fork(std::uint64_t salt) { return Rng(next() ^ (salt * 0xBF58476D1CE4E5B9ULL)); }

 private:
  std::uint64_t state_;
};

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    const auto j = rng.uniform_int(i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace easynlp
