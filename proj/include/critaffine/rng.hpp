#ifndef CRITAFFINE_RNG_HPP
#define CRITAFFINE_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace critaffine {

/// SplitMix64 finalizer. Used for key derivation only.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream-domain tags, so that streams for different purposes never collide.
namespace stream_tag {
inline constexpr std::uint64_t nuL = 0x6e754cULL;
inline constexpr std::uint64_t chain = 0x636861696eULL;
inline constexpr std::uint64_t restart = 0x7273ULL;
inline constexpr std::uint64_t resample = 0x7273706cULL;
inline constexpr std::uint64_t psi = 0x707369ULL;
inline constexpr std::uint64_t generic = 0x67656eULL;
}  // namespace stream_tag

/// Counter-derived random stream: xoshiro256++ seeded from a key path.
///
/// A stream is a pure function of (seed, path), so any task can rebuild its
/// own stream from its index without touching shared state. Streams are
/// cheap values; copy one to replay it.
class RandomStream {
 public:
  RandomStream() : RandomStream(0) {}

  explicit RandomStream(std::uint64_t seed) { reseed(mix64(seed)); }

  static RandomStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t key = mix64(seed);
    for (std::uint64_t p : path) key = mix64(key ^ mix64(p + 0x632be59bd9b4e019ULL));
    RandomStream s;
    s.reseed(key);
    s.key_ = key;
    return s;
  }

  /// Child stream; the parent state is not advanced.
  RandomStream split(std::uint64_t index) const {
    RandomStream s;
    std::uint64_t key = mix64(key_ ^ mix64(index + 0x2545f4914f6cdd1dULL));
    s.reseed(key);
    s.key_ = key;
    return s;
  }

  std::uint64_t key() const noexcept { return key_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_pos() noexcept { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift; the tiny bias is irrelevant for n << 2^64.
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Standard normal, Marsaglia polar method.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, q;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      q = u * u + v * v;
    } while (q >= 1.0 || q == 0.0);
    const double f = std::sqrt(-2.0 * std::log(q) / q);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Exponential with unit rate.
  double exponential() noexcept { return -std::log(uniform_pos()); }

  bool coin() noexcept { return (next_u64() >> 63) != 0; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  void reseed(std::uint64_t key) noexcept {
    std::uint64_t z = key;
    for (auto& w : s_) {
      z += 0x9e3779b97f4a7c15ULL;
      w = mix64(z);
    }
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
    has_spare_ = false;
    key_ = key;
  }

  std::array<std::uint64_t, 4> s_{};
  std::uint64_t key_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace critaffine

#endif  // CRITAFFINE_RNG_HPP
