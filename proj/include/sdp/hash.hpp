#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace sdp {

inline constexpr std::string_view kToolName = "sdp";
inline constexpr std::string_view kToolVersion = "0.3.0";

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string tool_version_string() { return std::string(kToolName) + " " + std::string(kToolVersion); }

}  // namespace sdp
