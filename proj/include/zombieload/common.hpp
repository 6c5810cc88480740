#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace zl {

using Tick = std::uint64_t;
using Byte = std::uint8_t;

inline constexpr std::size_t kLineSize = 64;
inline constexpr std::size_t kPageSize = 4096;
inline constexpr std::size_t kLinesPerPage = kPageSize / kLineSize;

/// One simulated tick is one microsecond.
inline constexpr double kTicksPerSecond = 1e6;

inline constexpr Tick kForever = std::numeric_limits<Tick>::max();

using Line = std::array<Byte, kLineSize>;

enum class ErrorCode {
  PageFault,
  PermissionFault,
  ConfigError,
  ParameterError,
  NoStaleData,
  ModeMismatch,
  InsufficientData,
  NoSignal,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::PageFault: return "page-fault";
    case ErrorCode::PermissionFault: return "permission-fault";
    case ErrorCode::ConfigError: return "config-error";
    case ErrorCode::ParameterError: return "parameter-error";
    case ErrorCode::NoStaleData: return "no-stale-data";
    case ErrorCode::ModeMismatch: return "mode-mismatch";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::NoSignal: return "no-signal";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline Tick saturating_add(Tick a, Tick b) {
  return a > kForever - b ? kForever : a + b;
}

inline double ticks_to_seconds(Tick t) { return static_cast<double>(t) / kTicksPerSecond; }
inline Tick seconds_to_ticks(double s) { return static_cast<Tick>(s * kTicksPerSecond + 0.5); }

using Rng = std::mt19937_64;

// splitmix64 finalizer, used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}

inline Line random_line(Rng& rng) {
  Line line{};
  for (std::size_t i = 0; i < kLineSize; i += 8) {
    std::uint64_t word = rng();
    for (std::size_t j = 0; j < 8; ++j) line[i + j] = static_cast<Byte>(word >> (8 * j));
  }
  return line;
}

inline std::string hex_byte(Byte b) {
  static constexpr char kDigits[] = "0123456789abcdef";
  return {kDigits[b >> 4], kDigits[b & 0xF]};
}

inline std::string hex_u64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out = "0x";
  bool started = false;
  for (int shift = 60; shift >= 0; shift -= 4) {
    unsigned nibble = (v >> shift) & 0xF;
    if (nibble != 0 || started || shift == 0) {
      out.push_back(kDigits[nibble]);
      started = true;
    }
  }
  return out;
}

}  // namespace zl
