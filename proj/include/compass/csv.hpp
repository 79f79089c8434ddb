#pragma once

#include <cstdio>
#include <string>

namespace compass {

/// Shortest round-trippable text for CSV/JSON-lines output; locale-free, so
/// identical values always print identically.
inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace compass
