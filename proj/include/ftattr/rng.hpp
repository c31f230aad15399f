#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace ftattr {

// Counter-based generator. The k-th draw (k = 0, 1, ...) of a stream with key
// K is splitmix64_mix(K + (k + 1) * 0x9E3779B97F4A7C15), i.e. SplitMix64
// evaluated at an explicit counter. Streams for sub-purposes are obtained with
// derive_key, so every random quantity in the library is a pure function of
// (seed, purpose tags, counter) and reproducible across builds and platforms.
std::uint64_t splitmix64_mix(std::uint64_t z);

// Folds tags into a key, one mix per tag.
std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform integer in [0, bound) by rejection; bound > 0.
  std::uint64_t below(std::uint64_t bound);
  // Standard normal by Box-Muller; consumes two draws per value.
  double normal();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Uniformly random permutation of [0, n) by Fisher-Yates driven by rng.
std::vector<std::size_t> random_permutation(std::size_t n, CounterRng& rng);

// Stable tags for derive_key.
namespace rng_tag {
inline constexpr std::uint64_t kShuffle = 0x73687566666c65ULL;
inline constexpr std::uint64_t kSplit = 0x73706c6974ULL;
inline constexpr std::uint64_t kSubset = 0x737562736574ULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kSynthetic = 0x73796e7468ULL;
inline constexpr std::uint64_t kFlip = 0x666c6970ULL;
inline constexpr std::uint64_t kProjection = 0x70726f6aULL;
inline constexpr std::uint64_t kSeedGroup = 0x73656564ULL;
}  // namespace rng_tag

}  // namespace ftattr
