#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <string>

namespace gridcharge {

/// Shortest decimal that round-trips to the same double. All CSV output goes
/// through this so files are byte-identical across runs and platforms.
inline std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";  // folds -0
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

}  // namespace gridcharge
