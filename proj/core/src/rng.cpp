#include "tsdf/rng.hpp"

namespace tsdf {

std::uint64_t hash_string(std::string_view text, std::uint64_t basis) {
  std::uint64_t h = 1469598103934665603ULL ^ basis;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  h += 0x9E3779B97F4A7C15ULL;
  h = (h ^ (h >> 30)) * 0xBF58476D1CE4E5B9ULL;
  h = (h ^ (h >> 27)) * 0x94D049BB133111EBULL;
  return h ^ (h >> 31);
}

}  // namespace tsdf
