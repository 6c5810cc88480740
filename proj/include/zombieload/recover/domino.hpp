#pragma once

#include "zombieload/common.hpp"

namespace zl::recover {

/// Low k bits of `a` followed by the high 8-k bits of `b`.
inline Byte domino(Byte a, Byte b, unsigned k) {
  if (k < 1 || k > 7) throw Error(ErrorCode::ParameterError, "domino split k must be in [1,7]");
  const unsigned low = a & ((1u << k) - 1);
  return static_cast<Byte>((low << (8 - k)) | (b >> k));
}

struct DominoByte {
  unsigned k = 4;
  Byte value = 0;
  std::size_t position = 0;  // index of the first byte of the pair
};

inline DominoByte make_domino(Byte a, Byte b, unsigned k, std::size_t position) {
  return {k, domino(a, b, k), position};
}

/// True if `value` could be domino(a, ?, k): its top k bits are a's low k bits.
inline bool domino_agrees_left(Byte value, Byte a, unsigned k) {
  return (value >> (8 - k)) == (a & ((1u << k) - 1));
}

/// True if `value` could be domino(?, b, k): its low 8-k bits are b's high bits.
inline bool domino_agrees_right(Byte value, Byte b, unsigned k) {
  return (value & ((1u << (8 - k)) - 1)) == (b >> k);
}

}  // namespace zl::recover
