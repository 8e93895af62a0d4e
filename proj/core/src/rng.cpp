#include "tbal/rng.hpp"

namespace tbal {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// FNV-1a
std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SeedStream SeedStream::derive(std::uint64_t index, std::string_view tag) const {
  std::uint64_t s = splitmix64(seed_);
  s = splitmix64(s ^ index);
  s = splitmix64(s ^ hash_tag(tag));
  return SeedStream(s);
}

Engine SeedStream::engine() const {
  std::seed_seq seq{static_cast<std::uint32_t>(seed_),
                    static_cast<std::uint32_t>(seed_ >> 32)};
  return Engine(seq);
}

}  // namespace tbal
