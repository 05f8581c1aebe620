#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedfocal {

using Rng = std::mt19937_64;

// Mixes a base seed with a list of tags (round, client, stream id...) into an
// independent 64-bit seed. std::seed_seq is fully specified by the standard,
// so derived streams are identical across platforms.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(base);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

// Stream tags used when deriving seeds from an experiment seed.
enum class SeedStream : std::uint64_t {
  kInit = 1,
  kPartition = 2,
  kSelectCarry = 3,
  kSelectFill = 4,
  kLocalTrain = 5,
};

inline std::uint64_t derive_seed(std::uint64_t base, SeedStream stream,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  return derive_seed(base, {static_cast<std::uint64_t>(stream), a, b});
}

}  // namespace fedfocal
