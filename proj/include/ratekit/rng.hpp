#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace ratekit {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// A stream is identified by a 64-bit key and three fixed counter words; the
/// fourth counter word is the block index and advances as numbers are drawn.
/// Streams with different (key, words) never overlap, which is what lets every
/// simulation unit own an independent substream regardless of evaluation order.
class PhiloxStream {
 public:
  using result_type = std::uint32_t;
  using Block = std::array<std::uint32_t, 4>;

  PhiloxStream(std::uint64_t key, std::uint32_t w1, std::uint32_t w2, std::uint32_t w3) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        words_{w1, w2, w3} {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (pos_ == 4) {
      buffer_ = philox({block_++, words_[0], words_[1], words_[2]}, key_);
      pos_ = 0;
    }
    return buffer_[pos_++];
  }

  /// Uniform double in the open interval (0, 1) from 53 random bits.
  double uniform() noexcept {
    const std::uint64_t hi = (*this)() >> 5;  // 27 bits
    const std::uint64_t lo = (*this)() >> 6;  // 26 bits
    return (static_cast<double>((hi << 26) | lo) + 0.5) * 0x1.0p-53;
  }

  static Block philox(Block ctr, std::array<std::uint32_t, 2> key) noexcept {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 3> words_;
  std::uint32_t block_ = 0;
  Block buffer_{};
  int pos_ = 4;
};

/// What a substream is used for; part of the stream identity.
enum class StreamPurpose : std::uint32_t {
  shared_effect = 1,
  saturated_effect = 2,
  count = 3,
  covariate = 4,
  oracle = 5,
};

inline constexpr std::uint32_t kPolicyLevel = 0xFFFFFFFFu;

/// SplitMix64 finalizer, used to fold the master seed and replication index into a key.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Independent stream for one (replication, policy, period, purpose) tuple.
/// Use kPolicyLevel as the period for draws that belong to the policy as a whole.
inline PhiloxStream substream(std::uint64_t seed, std::uint64_t replication, std::uint32_t policy,
                              std::uint32_t period, StreamPurpose purpose) noexcept {
  return PhiloxStream(mix64(seed ^ mix64(replication)), period, policy,
                      static_cast<std::uint32_t>(purpose));
}

}  // namespace ratekit
