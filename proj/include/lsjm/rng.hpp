#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace lsjm {

/**
 * Philox4x32-10 counter-based generator (Salmon et al., Random123).
 *
 * The 64-bit seed is the key; the upper half of the 128-bit counter selects an
 * independent substream (one per replicate/fold), the lower half counts
 * blocks. Satisfies UniformRandomBitGenerator with 64-bit outputs.
 */
class Philox4x32 {
 public:
  using result_type = std::uint64_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox4x32(std::uint64_t seed, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (used_ == 2) {
      buffer_ = generate(counter_block(block_index_++), key_);
      used_ = 0;
    }
    const auto lo = static_cast<std::uint64_t>(buffer_[2 * used_]);
    const auto hi = static_cast<std::uint64_t>(buffer_[2 * used_ + 1]);
    ++used_;
    return (hi << 32) | lo;
  }

  static Block generate(Block ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += 0x9E3779B9u;
        key[1] += 0xBB67AE85u;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(0xD2511F53u) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(0xCD9E8D57u) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  Block counter_block(std::uint64_t index) const {
    return {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
            static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  }

  Key key_;
  std::uint64_t stream_;
  std::uint64_t block_index_ = 0;
  Block buffer_{};
  int used_ = 2;
};

/// Uniform on (0, 1), never exactly 0 or 1 (53-bit mantissa).
inline double uniform_open(Philox4x32& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace lsjm
