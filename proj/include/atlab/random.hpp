#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace atlab {

using Rng = std::mt19937_64;

/// Purpose tags for the per-run seed split. Every random draw in a run comes
/// from a stream keyed by (run seed, purpose, indices...).
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  attack = 3,
  direction = 4,
  evaluation = 5,
  probe = 6,
  data = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, Stream purpose, std::initializer_list<std::uint64_t> keys = {}) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(purpose)));
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, Stream purpose, std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(seed, purpose, keys));
}

}  // namespace atlab
