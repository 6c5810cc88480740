#pragma once

#include <compare>
#include <cstdint>
#include <functional>

#include "zombieload/common.hpp"

namespace zl::uarch {

template <class Tag>
struct Address {
  std::uint64_t value = 0;

  constexpr Address() = default;
  constexpr explicit Address(std::uint64_t v) : value(v) {}

  /// Byte within the 64-byte line (bits 0..5).
  constexpr unsigned byte_offset() const { return static_cast<unsigned>(value & 0x3F); }
  /// Line within the 4 KiB page (bits 6..11). Untranslated, so identical for
  /// a virtual address and the physical address it resolves to.
  constexpr unsigned line_index() const { return static_cast<unsigned>((value >> 6) & 0x3F); }
  constexpr std::uint64_t page_offset() const { return value & (kPageSize - 1); }
  constexpr Address line_base() const { return Address{value & ~std::uint64_t{kLineSize - 1}}; }
  constexpr Address page_base() const { return Address{value & ~std::uint64_t{kPageSize - 1}}; }
  constexpr bool page_aligned() const { return page_offset() == 0; }

  constexpr Address operator+(std::uint64_t off) const { return Address{value + off}; }
  constexpr auto operator<=>(const Address&) const = default;
};

struct PhysTag {};
struct VirtTag {};
using PhysAddr = Address<PhysTag>;
using VirtAddr = Address<VirtTag>;

using Asid = std::uint32_t;

enum class CoreId : std::uint8_t { c0 = 0, c1 = 1 };

inline constexpr unsigned index_of(CoreId c) { return static_cast<unsigned>(c); }

struct PteFlags {
  bool present = true;
  bool user_accessible = true;
  bool accessed = true;
  bool dirty = false;
  bool huge = false;

  constexpr bool operator==(const PteFlags&) const = default;
};

struct PageTableEntry {
  PhysAddr frame;
  PteFlags flags;
};

enum class ZombieMode : std::uint8_t {
  V1KernelAlias,     // supervisor-only alias of a user page
  V2ClearedAccessed  // user alias whose accessed bit is clear
};

enum class Privilege : std::uint8_t { User, Supervisor };

}  // namespace zl::uarch

template <class Tag>
struct std::hash<zl::uarch::Address<Tag>> {
  std::size_t operator()(const zl::uarch::Address<Tag>& a) const noexcept {
    return std::hash<std::uint64_t>{}(a.value);
  }
};
