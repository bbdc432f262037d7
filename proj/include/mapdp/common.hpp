#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace mapdp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Non-finite checks at op boundaries, enabled via MAP_DEBUG_CHECKS=1.
inline bool debug_checks() {
  static const bool enabled = [] {
    const char* v = std::getenv("MAP_DEBUG_CHECKS");
    return v != nullptr && std::string(v) == "1";
  }();
  return enabled;
}

/// Compact decimal rendering used in CSV/JSON output.
inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace mapdp
