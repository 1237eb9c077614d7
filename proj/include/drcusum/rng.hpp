#pragma once

#include <cstdint>
#include <random>

namespace drcusum {

// All randomness flows through std::mt19937_64. A generator is identified by
// (seed, stream); distinct streams of the same seed are decorrelated by
// SplitMix64 scrambling, which is how Monte-Carlo trials obtain independent
// substreams: trial i of a run with base seed s uses make_rng(s, i).
using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(derive_seed(seed, stream)),
                      static_cast<std::uint32_t>(derive_seed(seed, stream) >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

}  // namespace drcusum
