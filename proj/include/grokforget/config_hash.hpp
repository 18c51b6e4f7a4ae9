#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include <json.hpp>

namespace gf {

// FNV-1a over the compact dump. nlohmann objects keep keys sorted, so equal
// configs hash equally regardless of insertion order.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace gf
