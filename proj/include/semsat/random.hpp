#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace semsat {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// FNV-1a, used to fold names (channel kind, arm label) into cell coordinates.
constexpr std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t hash_coords(std::initializer_list<std::uint64_t> coords) noexcept {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (auto c : coords) h = splitmix64(h ^ c);
  return h;
}

/// Per-trial seed: master ⊕ trial index. Scheduling order never enters.
constexpr std::uint64_t trial_seed(std::uint64_t master, std::uint64_t trial_index) noexcept {
  return master ^ trial_index;
}

/// Per-cell seed: master ⊕ hash(cell coordinates).
constexpr std::uint64_t cell_seed(std::uint64_t master,
                                  std::initializer_list<std::uint64_t> coords) noexcept {
  return master ^ hash_coords(coords);
}

// Seeds pass through splitmix64 so that adjacent integers give unrelated streams.
inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

}  // namespace semsat
