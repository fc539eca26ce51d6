#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace digl {

// Error taxonomy mirrored by the C API / CLI exit codes:
// usage errors (bad flags or config), validation errors (bad data or a
// failed numeric check), divergence (non-finite loss during training).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives independent seed streams so that skipping one consumer
// (e.g. an ablation that never samples interventions) does not shift
// the others.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

inline std::mt19937_64 make_rng(uint64_t seed, uint64_t tag) {
  return std::mt19937_64(mix_seed(seed, tag));
}

}  // namespace digl
