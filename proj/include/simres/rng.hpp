#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace simres {

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for a named component, e.g. derive_seed(root, "synth", pair_index).
/// All randomness in the toolkit flows from one root seed through this function.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label, std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(mix64(root ^ h) + index);
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view label, std::uint64_t index = 0) {
  return std::mt19937_64(derive_seed(root, label, index));
}

}  // namespace simres
