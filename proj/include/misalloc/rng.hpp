#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace misalloc {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Counter-based stream split: the seed of stream (tag, index) depends only on
// the master seed, so streams can be consumed in any order or thread.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                                 std::uint64_t index) {
  return splitmix64(splitmix64(master ^ hash_tag(tag)) + splitmix64(index));
}

inline Rng make_rng(std::uint64_t master, std::string_view tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(derive_seed(master, tag, index)),
                    static_cast<std::uint32_t>(derive_seed(master, tag, index) >> 32)};
  return Rng(seq);
}

// Standard normal via inverse CDF-free Box-Muller so draws do not depend on
// the library's normal_distribution caching across calls.
inline double std_normal(Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double u1 = u(rng);
  while (u1 <= 0.0) u1 = u(rng);
  double u2 = u(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

}  // namespace misalloc
