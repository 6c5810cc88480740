#pragma once

#include <array>
#include <span>
#include <vector>

#include "zombieload/recover/domino.hpp"
#include "zombieload/sampler/sampler.hpp"

namespace zl::recover {

using sampler::ByteDistribution;

/// The 7 domino distributions (k = 1..7, index k-1) observed for one pair of
/// adjacent positions.
using DominoWindow = std::array<ByteDistribution, 7>;

enum class FilterMode : std::uint8_t { Zero, DownWeight };

struct FilterOptions {
  FilterMode mode = FilterMode::Zero;
  double down_weight = 0.1;    // DownWeight only
  std::uint64_t min_count = 1;  // observations needed for a domino value to count as seen
};

struct FilterResult {
  std::vector<ByteDistribution> distributions;
  std::size_t removed = 0;  // candidate values zeroed or down-weighted
  bool warning = false;     // no usable windows at all; input returned unchanged
};

/// Drops candidate values whose overlap with a neighbour is never observed.
/// For the pair (i, i+1) and split k, domino(a, b, k) carries a's low k bits
/// and b's high 8-k bits, so a candidate at i must agree with the top bits of
/// some observed domino on its right, and a candidate at i+1 with the low bits
/// of one on its left. Windows with no observations are skipped.
inline FilterResult sliding_window_filter(std::span<const ByteDistribution> candidates,
                                          std::span<const DominoWindow> windows, const FilterOptions& opt = {}) {
  FilterResult res;
  res.distributions.assign(candidates.begin(), candidates.end());
  const std::size_t n = candidates.size();
  if (n > 0 && windows.size() + 1 != n && !windows.empty())
    throw Error(ErrorCode::ParameterError, "need one domino window per adjacent pair");

  bool any = false;
  for (const auto& w : windows)
    for (const auto& d : w) any = any || !d.empty();
  if (!any) {
    res.warning = true;
    return res;
  }

  auto seen = [&](const ByteDistribution& d, Byte v) { return d.counts[v] >= opt.min_count; };

  for (std::size_t i = 0; i < n; ++i) {
    auto& dist = res.distributions[i];
    for (unsigned v = 0; v < 256; ++v) {
      if (dist.counts[v] == 0) continue;
      bool supported = true;
      for (unsigned k = 1; k <= 7 && supported; ++k) {
        if (i + 1 < n) {
          const auto& right = windows[i][k - 1];
          if (!right.empty()) {
            bool ok = false;
            for (unsigned w = 0; w < 256 && !ok; ++w)
              ok = seen(right, static_cast<Byte>(w)) && domino_agrees_left(static_cast<Byte>(w), static_cast<Byte>(v), k);
            supported = ok;
          }
        }
        if (supported && i > 0) {
          const auto& left = windows[i - 1][k - 1];
          if (!left.empty()) {
            bool ok = false;
            for (unsigned w = 0; w < 256 && !ok; ++w)
              ok = seen(left, static_cast<Byte>(w)) && domino_agrees_right(static_cast<Byte>(w), static_cast<Byte>(v), k);
            supported = ok;
          }
        }
      }
      if (supported) continue;
      ++res.removed;
      if (opt.mode == FilterMode::Zero)
        dist.counts[v] = 0;
      else
        dist.counts[v] = static_cast<std::uint64_t>(static_cast<double>(dist.counts[v]) * opt.down_weight);
    }
  }
  return res;
}

}  // namespace zl::recover
