#pragma once

// Random streams: xoshiro256** (Blackman & Vigna) seeded through SplitMix64.
// A stream is identified by (seed, stream_id); the pair is mixed into the
// 256-bit state so independent streams never depend on call order.

#include <array>
#include <cstdint>

namespace gdim {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept {
    SplitMix64 mix(seed);
    // Fold the stream id in through a second mixer so that (seed, stream)
    // and (seed + 1, stream - 1) land far apart.
    SplitMix64 stream_mix(stream ^ 0x6a09e667f3bcc909ULL);
    const std::uint64_t offset = stream_mix.next();
    for (auto& word : s_) word = mix.next() ^ offset;
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return ~result_type{0}; }

  result_type operator()() noexcept { return next(); }

  std::uint64_t next() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> s_{};
};

/// Derive a child seed; used to hand out per-replica seeds from one master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  SplitMix64 mix(seed ^ (0xd1b54a32d192ed03ULL * (index + 1)));
  mix.next();
  return mix.next();
}

}  // namespace gdim
