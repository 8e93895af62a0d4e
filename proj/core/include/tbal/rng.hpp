#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tbal {

using Engine = std::mt19937_64;

/// Splittable seed. Every randomized step derives its own engine from
/// (master seed, round, purpose tag), so changing one code path never
/// shifts the draws seen by another.
class SeedStream {
 public:
  constexpr SeedStream() = default;
  constexpr explicit SeedStream(std::uint64_t seed) : seed_(seed) {}

  constexpr std::uint64_t seed() const { return seed_; }

  SeedStream derive(std::uint64_t index, std::string_view tag) const;
  SeedStream derive(std::string_view tag) const { return derive(0, tag); }

  Engine engine() const;

 private:
  std::uint64_t seed_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_tag(std::string_view tag);

}  // namespace tbal
