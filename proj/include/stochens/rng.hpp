#ifndef STOCHENS_RNG_HPP
#define STOCHENS_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>

namespace stochens {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/**
 * Derive an independent stream seed from a global seed and a list of tags
 * (member id, chain id, pass id, ...). Every random stream in the project is
 * obtained this way, so a run is a pure function of its global seed.
 */
std::uint64_t derive_seed(std::uint64_t base,
                          std::initializer_list<std::uint64_t> tags) noexcept;

inline Rng make_rng(std::uint64_t base,
                    std::initializer_list<std::uint64_t> tags) {
  return Rng(derive_seed(base, tags));
}

/// Stream tags used with derive_seed, one per consumer.
namespace stream {
inline constexpr std::uint64_t kTrainData = 0x7472616e;
inline constexpr std::uint64_t kTestData = 0x74657374;
inline constexpr std::uint64_t kMember = 0x6d656d62;
inline constexpr std::uint64_t kChain = 0x63686169;
inline constexpr std::uint64_t kPredict = 0x70726564;
inline constexpr std::uint64_t kSwaGrid = 0x73776167;
}  // namespace stream

}  // namespace stochens

#endif  // STOCHENS_RNG_HPP
