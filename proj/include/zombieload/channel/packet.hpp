#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <vector>

#include "zombieload/common.hpp"

namespace zl::channel {

inline constexpr Byte kDefaultPrefix = 0xC3;

/// 32-bit covert-channel unit. Wire layout (little endian): bits 0-7 data,
/// 8-15 checksum, 16-23 sequence number, 24-31 constant prefix.
struct Packet {
  Byte data = 0;
  Byte checksum = 0;
  Byte seq = 0;
  Byte prefix = kDefaultPrefix;

  std::uint32_t word() const {
    return std::uint32_t{data} | std::uint32_t{checksum} << 8 | std::uint32_t{seq} << 16 |
           std::uint32_t{prefix} << 24;
  }

  static Packet from_word(std::uint32_t w) {
    return {static_cast<Byte>(w), static_cast<Byte>(w >> 8), static_cast<Byte>(w >> 16),
            static_cast<Byte>(w >> 24)};
  }

  std::array<Byte, 4> bytes() const { return {data, checksum, seq, prefix}; }

  static Packet from_bytes(const std::array<Byte, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

  bool well_formed() const { return static_cast<Byte>(data + checksum) == 0; }

  bool operator==(const Packet&) const = default;
};

inline Packet encode_packet(Byte data, Byte seq, Byte prefix = kDefaultPrefix) {
  return {data, static_cast<Byte>(256u - data), seq, prefix};
}

/// Branch-free check run in the transient domain. The checksum byte is
/// replaced by (data + checksum) mod 256, which is zero only for a consistent
/// packet, so the low 16 bits form an in-bounds oracle index (0..255) exactly
/// when the packet is intact.
inline std::uint16_t transient_verify(const Packet& p) {
  return static_cast<std::uint16_t>(p.data | static_cast<Byte>(p.data + p.checksum) << 8);
}

/// Same fold, but carrying the sequence number through the oracle.
inline std::uint16_t transient_verify_seq(const Packet& p) {
  return static_cast<std::uint16_t>(p.seq | static_cast<Byte>(p.data + p.checksum) << 8);
}

struct BitEncoding {
  std::size_t lines_per_bit = 2;  // >= 2 keeps the adjacent-line prefetcher out
  bool page_per_value = true;

  std::size_t stride() const { return page_per_value ? kPageSize : lines_per_bit * kLineSize; }
};

/// 256-entry Flush+Reload oracle. Only the cached state of each entry's first
/// line is modelled.
class OracleArray {
 public:
  explicit OracleArray(BitEncoding enc = {}) : encoding_(enc) {
    if (enc.lines_per_bit < 2)
      throw Error(ErrorCode::ParameterError, "oracle encoding needs at least 2 cache lines per bit");
  }

  const BitEncoding& encoding() const { return encoding_; }
  std::size_t footprint_bytes() const { return 256 * encoding_.stride(); }

  /// Transient access to oracle[index]; out-of-bounds indices touch nothing.
  void touch(std::uint32_t index) {
    if (index <= 255) cached_.set(index);
  }

  bool cached(Byte value) const { return cached_.test(value); }
  std::size_t cached_count() const { return cached_.count(); }

  /// Reload every entry, report the cached ones and flush them again.
  std::vector<Byte> scan() {
    std::vector<Byte> hits;
    for (unsigned v = 0; v < 256; ++v)
      if (cached_.test(v)) hits.push_back(static_cast<Byte>(v));
    cached_.reset();
    return hits;
  }

 private:
  BitEncoding encoding_;
  std::bitset<256> cached_;
};

inline void oracle_touch(OracleArray& oracle, std::uint32_t index) { oracle.touch(index); }
inline std::vector<Byte> flush_reload_scan(OracleArray& oracle) { return oracle.scan(); }

}  // namespace zl::channel
