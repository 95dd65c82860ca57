#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace depthpose {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
} // namespace detail

/// Seed of the named sub-stream `name` derived from a master seed, optionally
/// further keyed by up to two indices (epoch, sample, ...).
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view name,
                                    std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(master ^ detail::fnv1a(name));
  h = detail::splitmix64(h ^ a);
  return detail::splitmix64(h ^ (b * 0x9e3779b97f4a7c15ULL));
}

inline Rng make_rng(std::uint64_t master, std::string_view name, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(substream_seed(master, name, a, b));
}

/// Uniform double in [0,1) from the top 53 bits; unlike
/// std::uniform_real_distribution this is identical across standard libraries.
inline double uniform01(Rng &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng &rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Standard normal via Box-Muller.
inline double standard_normal(Rng &rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0)
    u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Uniform index in [0, n) by rejection; portable replacement for
/// std::uniform_int_distribution.
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit)
    x = rng();
  return x % n;
}

/// Fisher-Yates shuffle driven by uniform_index.
template <typename T> void shuffle(std::vector<T> &items, Rng &rng) {
  for (std::size_t i = items.size(); i > 1; --i)
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
}

} // namespace depthpose
