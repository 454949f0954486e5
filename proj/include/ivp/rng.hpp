#pragma once

#include <cstdint>
#include <random>

namespace ivp {

using Rng = std::mt19937_64;

/// Independent, reproducible stream for one purpose (data order, timestep
/// sampling, masking, ...). Streams with different tags never share state.
inline Rng make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

namespace stream {
inline constexpr std::uint64_t kData = 0x6461746100000001ULL;
inline constexpr std::uint64_t kOrder = 0x6f72646572000002ULL;
inline constexpr std::uint64_t kTimestep = 0x74696d6500000003ULL;
inline constexpr std::uint64_t kMask = 0x6d61736b00000004ULL;
inline constexpr std::uint64_t kWeights = 0x7765696768740005ULL;
inline constexpr std::uint64_t kPerturb = 0x7065727400000006ULL;
}  // namespace stream

/// Seed for torch's global generator derived from a run seed.
inline std::uint64_t torch_seed(std::uint64_t seed, std::uint64_t index = 0) {
  auto rng = make_stream(seed, stream::kWeights, index);
  return rng() >> 1;
}

}  // namespace ivp
