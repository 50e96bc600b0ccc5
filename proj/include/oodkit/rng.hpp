#pragma once

#include <cstdint>
#include <random>

namespace oodkit {

using Rng = std::mt19937_64;

// splitmix64 finaliser; folds a stream index into a seed.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Named sub-streams so unrelated consumers of one master seed never share draws.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kBatchIn = 2;
inline constexpr std::uint64_t kBatchOe = 3;
inline constexpr std::uint64_t kSplit = 4;
inline constexpr std::uint64_t kSynth = 5;
inline constexpr std::uint64_t kData = 6;
}  // namespace stream

}  // namespace oodkit
