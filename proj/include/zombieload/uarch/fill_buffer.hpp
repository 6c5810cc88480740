#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "zombieload/common.hpp"
#include "zombieload/uarch/types.hpp"

namespace zl::uarch {

enum class SlotState : std::uint8_t { Empty, Allocated, Freed };

/// One line-fill buffer slot. The data array survives the transition to
/// Freed and is only replaced when the slot is handed out again.
struct FillBufferEntry {
  unsigned partial_tag = 0;  // bits 6..11 of the physical address
  PhysAddr full_line_addr;   // ground truth only, never used for matching
  Line data{};
  CoreId owner = CoreId::c0;
  SlotState state = SlotState::Empty;
  Tick filled_at = 0;
  Tick freed_at = 0;
  std::uint64_t recency = 0;     // global order of the last fill or free
  std::uint64_t generation = 0;  // bumped on every (re)allocation
};

enum class ReplacementPolicy : std::uint8_t {
  RoundRobin,
  /// Least-recently-allocated slot, except that with probability
  /// `reuse_probability` the most-recently-allocated free slot is reused.
  PseudoLruReuse,
};

class FillBuffer {
 public:
  FillBuffer(std::size_t capacity, ReplacementPolicy policy, double reuse_probability,
             std::uint64_t seed)
      : entries_(capacity),
        last_alloc_(capacity, 0),
        policy_(policy),
        reuse_probability_(reuse_probability),
        rng_(seed) {
    if (capacity == 0) throw Error(ErrorCode::ConfigError, "fill buffer capacity must be > 0");
    if (reuse_probability < 0.0 || reuse_probability > 1.0)
      throw Error(ErrorCode::ConfigError, "reuse probability must be in [0,1]");
  }

  std::size_t capacity() const { return entries_.size(); }
  ReplacementPolicy policy() const { return policy_; }
  std::span<const FillBufferEntry> entries() const { return entries_; }
  const FillBufferEntry& operator[](std::size_t slot) const { return entries_.at(slot); }

  std::size_t allocated_count() const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) {
      return e.state == SlotState::Allocated;
    }));
  }

  bool ever_filled() const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [](const auto& e) { return e.state != SlotState::Empty; });
  }

  /// In-flight entry already holding `line`, used for load merging.
  std::optional<std::size_t> find_in_flight(PhysAddr line) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].state == SlotState::Allocated && entries_[i].full_line_addr == line) return i;
    return std::nullopt;
  }

  /// Returns nullopt when every slot is in flight.
  std::optional<std::size_t> allocate(PhysAddr line, const Line& data, CoreId owner, Tick now) {
    auto slot = pick_slot();
    if (!slot) return std::nullopt;
    auto& e = entries_[*slot];
    e.partial_tag = line.line_index();
    e.full_line_addr = line.line_base();
    e.data = data;
    e.owner = owner;
    e.state = SlotState::Allocated;
    e.filled_at = now;
    e.recency = ++sequence_;
    ++e.generation;
    last_alloc_[*slot] = sequence_;
    return slot;
  }

  void release(std::size_t slot, Tick now) {
    auto& e = entries_.at(slot);
    if (e.state != SlotState::Allocated) return;
    e.state = SlotState::Freed;
    e.freed_at = now;
    e.recency = ++sequence_;
  }

  /// Zombie-load source selection: the most recent entry whose partial tag
  /// matches, otherwise the most recent entry overall.
  std::optional<std::size_t> select_stale(unsigned tag, bool allow_allocated) const {
    std::optional<std::size_t> best_match;
    std::optional<std::size_t> best_any;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& e = entries_[i];
      if (e.state == SlotState::Empty) continue;
      if (e.state == SlotState::Allocated && !allow_allocated) continue;
      if (!best_any || e.recency > entries_[*best_any].recency) best_any = i;
      if (e.partial_tag == tag && (!best_match || e.recency > entries_[*best_match].recency))
        best_match = i;
    }
    return best_match ? best_match : best_any;
  }

 private:
  std::optional<std::size_t> pick_slot() {
    const std::size_t n = entries_.size();
    if (policy_ == ReplacementPolicy::RoundRobin) {
      for (std::size_t k = 0; k < n; ++k) {
        std::size_t i = (rr_next_ + k) % n;
        if (entries_[i].state != SlotState::Allocated) {
          rr_next_ = (i + 1) % n;
          return i;
        }
      }
      return std::nullopt;
    }

    for (std::size_t i = 0; i < n; ++i)
      if (entries_[i].state == SlotState::Empty) return i;

    std::optional<std::size_t> lru;
    std::optional<std::size_t> mru;
    for (std::size_t i = 0; i < n; ++i) {
      if (entries_[i].state == SlotState::Allocated) continue;
      if (!lru || last_alloc_[i] < last_alloc_[*lru]) lru = i;
      if (!mru || last_alloc_[i] > last_alloc_[*mru]) mru = i;
    }
    if (!lru) return std::nullopt;
    return bernoulli(rng_, reuse_probability_) ? mru : lru;
  }

  std::vector<FillBufferEntry> entries_;
  std::vector<std::uint64_t> last_alloc_;
  ReplacementPolicy policy_;
  double reuse_probability_;
  Rng rng_;
  std::uint64_t sequence_ = 0;
  std::size_t rr_next_ = 0;
};

}  // namespace zl::uarch
