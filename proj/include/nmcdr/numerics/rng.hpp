#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace nmcdr::num {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed of a named stream derived from a root seed ("ingest", "split", "negatives", "init", "matching", ...).
constexpr std::uint64_t stream_seed(std::uint64_t root, std::string_view name) noexcept {
  return mix64(root ^ mix64(fnv1a(name)));
}

/// Folds extra keys (domain, user, epoch, ...) into a seed.
template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t seed, Keys... keys) noexcept {
  ((seed = mix64(seed ^ mix64(static_cast<std::uint64_t>(keys) + 0x632be59bd9b4e019ULL))), ...);
  return seed;
}

/// Uniform integer in [0, n) without modulo bias.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Uniform real in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Standard normal via Box–Muller (portable across standard libraries).
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher–Yates shuffle driven by uniform_below.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

/// k distinct values from [0, n) in sampling order (Floyd's algorithm, k ≤ n).
std::vector<std::uint64_t> sample_without_replacement(Rng& rng, std::uint64_t n, std::uint64_t k);

}  // namespace nmcdr::num
