#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "mcnip/common.hpp"

namespace mcnip {

// All randomness flows from one root seed through named sub-streams
// ("synth", "init", "batching", "sampling", ...), so stages can be rerun
// independently yet deterministically.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  std::uint64_t h = fnv1a64(stream);
  // splitmix64 finalizer over the combined state
  std::uint64_t z = root + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 stream_rng(std::uint64_t root, std::string_view stream) {
  return std::mt19937_64(derive_seed(root, stream));
}

}  // namespace mcnip
