#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace mvb {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ull;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Node in a tree of independent random streams. A root seed is split by
/// index (Picard iterate, tree, step, particle) so every draw is a pure
/// function of its coordinates and independent of execution order.
class StreamKey {
 public:
  constexpr explicit StreamKey(std::uint64_t seed) : value_(mix64(seed + kGoldenGamma)) {}

  constexpr StreamKey child(std::uint64_t index) const {
    return StreamKey(Raw{}, mix64(value_ ^ mix64(index * kGoldenGamma + 0x632BE59BD9B4E019ull)));
  }

  constexpr std::uint64_t value() const { return value_; }

 private:
  struct Raw {};
  constexpr StreamKey(Raw, std::uint64_t value) : value_(value) {}
  std::uint64_t value_;
};

/// Purpose tags for the first split below a tree key.
enum class StreamTag : std::uint64_t { kInitial = 1, kStep = 2 };

inline StreamKey tagged(const StreamKey& key, StreamTag tag) { return key.child(static_cast<std::uint64_t>(tag)); }

/// SplitMix64 generator seeded from a stream key; satisfies
/// UniformRandomBitGenerator so it plugs into <random> distributions.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(const StreamKey& key) : state_(key.value()) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += kGoldenGamma;
    return mix64(state_);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(operator()() >> 11) * 0x1.0p-53; }

  double normal() { return std::normal_distribution<double>{}(*this); }

 private:
  std::uint64_t state_;
};

}  // namespace mvb
