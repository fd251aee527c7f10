#pragma once

// Counter-based random streams. Every draw is a pure function of
// (key, counter), so results are identical across platforms and standard
// library implementations (std::*_distribution is implementation-defined).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace biasprobe {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent stream key from a parent key and a label.
constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t label) noexcept {
  return splitmix64(splitmix64(parent) ^ (label * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
}

// FNV-1a; used to fold names into seeds.
constexpr std::uint64_t hash_name(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t bits_at(std::uint64_t key, std::uint64_t counter) noexcept {
  return splitmix64(key ^ splitmix64(counter + 0x632be59bd9b4e019ULL));
}

// Uniform on the open interval (0, 1).
inline double uniform_at(std::uint64_t key, std::uint64_t counter) noexcept {
  return (static_cast<double>(bits_at(key, counter) >> 11) + 0.5) * 0x1.0p-53;
}

// Pair of independent standard normals from counters (2k, 2k+1), Box-Muller.
struct NormalPair {
  double first;
  double second;
};

inline NormalPair normal_pair_at(std::uint64_t key, std::uint64_t k) noexcept {
  const double u1 = uniform_at(key, 2 * k);
  const double u2 = uniform_at(key, 2 * k + 1);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

// Sequential view over a counter stream.
class Stream {
 public:
  explicit Stream(std::uint64_t key) noexcept : key_(key) {}

  std::uint64_t next_bits() noexcept { return bits_at(key_, counter_++); }
  double uniform() noexcept { return uniform_at(key_, counter_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Unbiased integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_bits();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t key() const noexcept { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace biasprobe
