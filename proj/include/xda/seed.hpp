#pragma once

#include <cstdint>
#include <string_view>

namespace xda {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Every random choice in a run flows from one root seed through this
/// derivation: FNV-1a over the purpose label folded with the base seed and
/// index, finished with splitmix64. E.g. fold i's shot selection uses
/// derive_seed(root, "fold-shots", i).
inline uint64_t derive_seed(uint64_t base, std::string_view purpose,
                            uint64_t index = 0) {
  uint64_t h = 1469598103934665603ULL ^ base;
  for (char c : purpose) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ULL;
  }
  h ^= index * 0x9e3779b97f4a7c15ULL + 0xd1b54a32d192ed03ULL;
  return splitmix64(h);
}

}  // namespace xda
