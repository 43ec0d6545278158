#pragma once

#include <cstdint>
#include <limits>

namespace sbthermo {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Derives an independent stream key from a parent key and a stream label.
inline constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t label) {
  return splitmix64(key ^ splitmix64(label + 0x632BE59BD9B4E019ULL));
}

inline constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a,
                                          std::uint64_t b) {
  return derive_key(derive_key(seed, a), b);
}

inline constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a,
                                          std::uint64_t b, std::uint64_t c) {
  return derive_key(derive_key(seed, a, b), c);
}

// Counter-based generator: the i-th output is a pure function of (key, i), so
// any record can be regenerated without replaying the ones before it.
// Satisfies UniformRandomBitGenerator for use with <random> distributions.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit constexpr CounterRng(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() { return at(counter_++); }

  constexpr result_type at(std::uint64_t i) const {
    return splitmix64(key_ + splitmix64(i));
  }

  // Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() { return to_unit((*this)()); }

  static constexpr double to_unit(std::uint64_t bits) {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sbthermo
