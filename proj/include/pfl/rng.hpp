#pragma once

// Reproducible random streams. A stream is identified by a root seed plus a
// tuple of tags (purpose, client id, round, ...), hashed with SplitMix64, so
// the numbers a client sees never depend on scheduling order.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace pfl {

std::uint64_t splitmix64(std::uint64_t x);

/// Mixes the root seed with every tag in order.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> tags);

using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t root, std::initializer_list<std::uint64_t> tags) {
  return Rng(derive_seed(root, tags));
}

/// Stream purposes, used as the first tag.
enum class StreamTag : std::uint64_t {
  kInit = 1,
  kData,
  kPartition,
  kSampling,
  kLocalTrain,
  kAttack,
  kServer,
  kSignVector,
  kProbe,
  kGroups,
  kGmm,
};

inline std::uint64_t tag(StreamTag t) { return static_cast<std::uint64_t>(t); }

}  // namespace pfl
