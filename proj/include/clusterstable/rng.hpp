#ifndef CLUSTERSTABLE_RNG_HPP
#define CLUSTERSTABLE_RNG_HPP

#include <cstdint>
#include <random>

namespace clusterstable {

using Rng = std::mt19937_64;

// Tags keep the streams of different consumers apart even when they share
// (seed, index).
enum class StreamTag : std::uint64_t {
  Dataset = 1,
  Subsample = 2,
  PairsBootstrap = 3,
  WildBootstrap = 4,
  LePage = 5,
  Tail = 6,
  MethodBase = 100,  // + method ordinal in Monte Carlo runs
};

/// Independent generator for the stream identified by (seed, index, tag).
/// The result depends only on the triple, never on the order in which
/// streams are requested, so parallel consumers stay reproducible.
inline Rng make_stream(std::uint64_t seed, std::uint64_t index = 0,
                       std::uint64_t tag = 0) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v & 0xffffffffu); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(index), hi(index), lo(tag), hi(tag)};
  return Rng(seq);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t index, StreamTag tag) {
  return make_stream(seed, index, static_cast<std::uint64_t>(tag));
}

/// Uniform draw on (0, 1].
inline double uniform_open_zero(Rng& rng) {
  return 1.0 - std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace clusterstable

#endif  // CLUSTERSTABLE_RNG_HPP
