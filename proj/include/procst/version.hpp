#pragma once

#include <cstdint>
#include <string>

namespace procst {

inline constexpr const char* kVersionString = "procst 0.1.0";

/// Content hash of the version string, FNV-1a 64, rendered like a short
/// commit id for run manifests.
inline std::string version_hash() {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* p = kVersionString; *p; ++p) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(*p));
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 12);
}

}  // namespace procst
