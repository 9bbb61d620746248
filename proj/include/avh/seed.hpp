#pragma once

#include <cstdint>
#include <string_view>

namespace avh {

/// splitmix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over the bytes of `s`.
constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Component seed derivation. Every stage draws its seed as
///   mix64(master ^ fnv1a(tag)) folded with each key via mix64(h ^ key),
/// so a stage can be rerun in isolation and parallel scheduling never changes
/// which stream a unit of work sees.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  return mix64(master ^ fnv1a(tag));
}

template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t key,
                                    Keys... rest) {
  std::uint64_t h = mix64(derive_seed(master, tag) ^ key);
  ((h = mix64(h ^ static_cast<std::uint64_t>(rest))), ...);
  return h;
}

/// Uniform double in (0, 1] from a 64-bit word.
constexpr double unit_interval(std::uint64_t bits) {
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

}  // namespace avh
