// Counter-based RNG stream derivation. Streams for distinct
// (seed, client, round, step) coordinates are independent and reproducible,
// which makes client-parallel execution bit-identical to the serial order.
#pragma once

#include <cstdint>
#include <random>

namespace dfedda {

inline std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream coordinates: role distinguishes usages that share (client, round,
// step), e.g. tracker initialization vs. local gradient sampling.
inline std::mt19937_64 derive_rng(std::uint64_t master_seed, std::uint64_t client, std::uint64_t round,
                                  std::uint64_t step, std::uint64_t role = 0) {
  std::uint64_t h = mix64(master_seed);
  h = mix64(h ^ (client * 0xd1342543de82ef95ULL));
  h = mix64(h ^ (round * 0xaf251af3b0f025b5ULL));
  h = mix64(h ^ (step * 0x9e6c63d0876a9a35ULL));
  h = mix64(h ^ (role * 0xb564ef22ec7aece5ULL));
  return std::mt19937_64(h);
}

}  // namespace dfedda
