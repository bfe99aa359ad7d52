#pragma once

// Counter-based random substreams. Every stochastic draw in training is keyed
// by (seed, label, epoch, batch, pair), so a worker can reproduce any pair's
// draws without replaying the ones before it.

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string_view>

namespace bingear {

inline constexpr std::uint64_t splitmix64_step(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view text,
                                       std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Fold a label and a list of counters into a 64-bit stream key.
inline std::uint64_t stream_key(std::uint64_t seed, std::string_view label,
                                std::initializer_list<std::uint64_t> counters) noexcept {
  std::uint64_t state = seed ^ fnv1a64(label);
  std::uint64_t key = splitmix64_step(state);
  for (std::uint64_t c : counters) {
    state = key ^ (c + 0x632be59bd9b4e019ULL);
    key = splitmix64_step(state);
  }
  return key;
}

// SplitMix64 as a UniformRandomBitGenerator.
class StreamRng {
 public:
  using result_type = std::uint64_t;

  explicit StreamRng(std::uint64_t key) noexcept : state_(key) {}
  StreamRng(std::uint64_t seed, std::string_view label,
            std::initializer_list<std::uint64_t> counters) noexcept
      : state_(stream_key(seed, label, counters)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() noexcept { return splitmix64_step(state_); }

  // Uniform in [0, 1) with 24 random bits (exact in float).
  float uniform01() noexcept {
    return static_cast<float>((*this)() >> 40) * 0x1.0p-24f;
  }

 private:
  std::uint64_t state_;
};

}  // namespace bingear
