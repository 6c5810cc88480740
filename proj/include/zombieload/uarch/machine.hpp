#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "zombieload/common.hpp"
#include "zombieload/uarch/fill_buffer.hpp"
#include "zombieload/uarch/types.hpp"

namespace zl::uarch {

enum class Uarch : std::uint8_t { PreSkylake, Skylake };

struct MachineConfig {
  Uarch uarch = Uarch::Skylake;
  std::optional<std::size_t> fb_entries;  // overrides the generation default
  Tick c_store = 1;
  Tick c_stall = 5;
  ReplacementPolicy replacement = ReplacementPolicy::PseudoLruReuse;
  double reuse_probability = 0.3;
  std::uint64_t replacement_seed = 0;
  /// Whether in-flight (Allocated) entries may serve zombie loads.
  bool stale_allocated_eligible = true;

  std::size_t capacity() const {
    if (fb_entries) return *fb_entries;
    return uarch == Uarch::Skylake ? 12 : 10;
  }

  bool operator==(const MachineConfig&) const = default;
};

// Event bits recorded per executed operation.
namespace event {
inline constexpr std::uint32_t kNone = 0;
inline constexpr std::uint32_t kL1Hit = 1u << 0;
inline constexpr std::uint32_t kFbAlloc = 1u << 1;
inline constexpr std::uint32_t kFbMerge = 1u << 2;
inline constexpr std::uint32_t kAssist = 1u << 3;
inline constexpr std::uint32_t kPageFault = 1u << 4;
inline constexpr std::uint32_t kPermissionFault = 1u << 5;
inline constexpr std::uint32_t kNoStaleData = 1u << 6;
inline constexpr std::uint32_t kModeMismatch = 1u << 7;
inline constexpr std::uint32_t kLeak = 1u << 8;
inline constexpr std::uint32_t kFbStall = 1u << 9;
inline constexpr std::uint32_t kFlush = 1u << 10;

inline std::string to_string(std::uint32_t mask) {
  static constexpr std::pair<std::uint32_t, const char*> kNames[] = {
      {kL1Hit, "l1-hit"},         {kFbAlloc, "fb-alloc"},
      {kFbMerge, "fb-merge"},     {kAssist, "assist"},
      {kPageFault, "page-fault"}, {kPermissionFault, "permission-fault"},
      {kNoStaleData, "no-stale-data"}, {kModeMismatch, "mode-mismatch"},
      {kLeak, "leak"},            {kFbStall, "fb-stall"},
      {kFlush, "flush"},
  };
  std::string out;
  for (const auto& [bit, name] : kNames) {
    if (!(mask & bit)) continue;
    if (!out.empty()) out += '|';
    out += name;
  }
  return out;
}
}  // namespace event

struct AccessResult {
  PhysAddr paddr;
  std::optional<std::size_t> fb_slot;
  std::optional<Byte> value;
  std::uint32_t events = event::kNone;
};

struct ZombieLeak {
  Byte value;
  std::size_t source_entry;
};

/// What the transient domain sees: the whole line of the selected entry.
struct ZombieLine {
  Line data;
  std::size_t source_entry;
  CoreId owner;
};

struct StoreRequest {
  CoreId core = CoreId::c0;
  Asid asid = 0;
  VirtAddr vaddr;
  Line data{};
};

struct Mitigation {
  bool flush_l1 = false;
  std::size_t stuffing_loads = 0;

  static Mitigation FlushL1() { return {true, 0}; }
  static Mitigation LoadStuffing(std::size_t n) { return {false, n}; }
  static Mitigation Both(std::size_t n) { return {true, n}; }
};

/// One physical core with two logical cores sharing a fill buffer and L1D.
/// Single-threaded; callers serialize access.
class Machine {
 public:
  explicit Machine(MachineConfig config = {})
      : config_(config),
        fb_(config.capacity(), config.replacement, config.reuse_probability, config.replacement_seed) {}

  const MachineConfig& config() const { return config_; }
  const FillBuffer& fill_buffer() const { return fb_; }

  Tick now() const { return clock_; }
  void advance_to(Tick t) { clock_ = std::max(clock_, t); }
  void tick(Tick dt = 1) { clock_ += dt; }

  std::uint64_t assist_events() const { return assist_events_; }
  std::uint64_t fb_allocations() const { return fb_allocations_; }

  void map_page(Asid asid, VirtAddr v, PhysAddr frame, PteFlags flags) {
    if (!v.page_aligned() || !frame.page_aligned())
      throw Error(ErrorCode::ConfigError, "map_page: unaligned page " + hex_u64(v.value) + " -> " +
                                              hex_u64(frame.value));
    auto& table = page_tables_[asid];
    auto [it, inserted] = table.try_emplace(v.value, PageTableEntry{frame, flags});
    if (!inserted)
      throw Error(ErrorCode::ConfigError,
                  "map_page: " + hex_u64(v.value) + " already mapped in asid " + std::to_string(asid));
  }

  const PageTableEntry* find_pte(Asid asid, VirtAddr v) const {
    auto t = page_tables_.find(asid);
    if (t == page_tables_.end()) return nullptr;
    auto e = t->second.find(v.page_base().value);
    return e == t->second.end() ? nullptr : &e->second;
  }

  /// OS-level PTE maintenance (e.g. the periodic accessed-bit clearing).
  void set_accessed(Asid asid, VirtAddr v, bool accessed) { pte_mut(asid, v).flags.accessed = accessed; }

  PhysAddr translate(Asid asid, VirtAddr v) const {
    const auto* pte = find_pte(asid, v);
    if (!pte || !pte->flags.present)
      throw Error(ErrorCode::PageFault, "no mapping for " + hex_u64(v.value) + " in asid " + std::to_string(asid));
    return pte->frame + v.page_offset();
  }

  Byte read_arch(CoreId core, Asid asid, VirtAddr v, Privilege priv = Privilege::User) {
    return *load(core, asid, v, priv).value;
  }

  /// Architectural load. Throws on faults.
  AccessResult load(CoreId core, Asid asid, VirtAddr v, Privilege priv = Privilege::User) {
    validate(core);
    AccessResult r;
    r.paddr = checked_access(asid, v, priv, false, r.events);
    const PhysAddr line = r.paddr.line_base();
    r.value = line_ref(line)[r.paddr.byte_offset()];
    if (l1_.contains(line.value)) {
      r.events |= event::kL1Hit;
      return r;
    }
    r.fb_slot = fill(core, line, line_ref(line), r.events);
    l1_.insert(line.value);
    return r;
  }

  AccessResult write_arch(CoreId core, Asid asid, VirtAddr v, Byte value, Privilege priv = Privilege::User) {
    validate(core);
    AccessResult r;
    r.paddr = checked_access(asid, v, priv, true, r.events);
    auto& data = line_ref(r.paddr.line_base());
    data[r.paddr.byte_offset()] = value;
    r.value = value;
    finish_write(core, r, data);
    return r;
  }

  AccessResult write_line(CoreId core, Asid asid, VirtAddr v, const Line& line, Privilege priv = Privilege::User) {
    validate(core);
    AccessResult r;
    r.paddr = checked_access(asid, v.line_base(), priv, true, r.events);
    auto& data = line_ref(r.paddr.line_base());
    data = line;
    finish_write(core, r, data);
    return r;
  }

  void clflush(CoreId core, Asid asid, VirtAddr v) {
    validate(core);
    l1_.erase(translate(asid, v).line_base().value);
  }

  /// Load issued only in the transient domain (mispredicted branch, prefetch).
  /// Uses a fill-buffer entry but leaves PTE bits and L1 untouched.
  AccessResult load_speculative(CoreId core, Asid asid, VirtAddr v) {
    validate(core);
    AccessResult r;
    r.paddr = translate(asid, v);
    const PhysAddr line = r.paddr.line_base();
    r.value = line_ref(line)[r.paddr.byte_offset()];
    if (l1_.contains(line.value)) {
      r.events |= event::kL1Hit;
      return r;
    }
    r.fb_slot = fill(core, line, line_ref(line), r.events);
    return r;
  }

  ZombieLeak zombie_load(CoreId core, Asid asid, VirtAddr v, ZombieMode mode) const {
    auto view = zombie_line(core, asid, v, mode);
    return {view.data[v.byte_offset()], view.source_entry};
  }

  ZombieLine zombie_line(CoreId core, Asid asid, VirtAddr v, ZombieMode mode) const {
    validate(core);
    const auto* pte = find_pte(asid, v);
    if (!pte || !pte->flags.present)
      throw Error(ErrorCode::PageFault, "zombie_load: no mapping for " + hex_u64(v.value));
    if (mode == ZombieMode::V1KernelAlias && pte->flags.user_accessible)
      throw Error(ErrorCode::ModeMismatch, "V1 requires a supervisor-only mapping");
    if (mode == ZombieMode::V2ClearedAccessed && pte->flags.accessed)
      throw Error(ErrorCode::ModeMismatch, "V2 requires a cleared accessed bit");
    const unsigned tag = (pte->frame + v.page_offset()).line_index();
    auto slot = fb_.select_stale(tag, config_.stale_allocated_eligible);
    if (!slot) throw Error(ErrorCode::NoStaleData, "fill buffer holds no data yet");
    const auto& e = fb_[*slot];
    return {e.data, *slot, e.owner};
  }

  Tick store_nt(CoreId core, Asid asid, VirtAddr v, const Line& data) {
    StoreRequest req{core, asid, v, data};
    return store_nt_batch(std::span<const StoreRequest>(&req, 1));
  }

  /// Concurrent non-temporal stores from either logical core. Each store costs
  /// c_store; a store that finds every slot in flight waits c_stall for the
  /// oldest one to drain.
  Tick store_nt_batch(std::span<const StoreRequest> batch) {
    Tick latency = 0;
    std::vector<std::size_t> in_flight;
    for (const auto& req : batch) {
      validate(req.core);
      std::uint32_t events = 0;
      const PhysAddr pa = checked_access(req.asid, req.vaddr.line_base(), Privilege::User, true, events);
      const PhysAddr line = pa.line_base();
      line_ref(line) = req.data;
      l1_.erase(line.value);
      latency += config_.c_store;
      auto slot = fb_.allocate(line, req.data, req.core, clock_);
      if (!slot) {
        latency += config_.c_stall;
        if (!in_flight.empty()) {
          fb_.release(in_flight.front(), clock_);
          in_flight.erase(in_flight.begin());
        }
        slot = fb_.allocate(line, req.data, req.core, clock_);
      }
      if (slot) {
        ++fb_allocations_;
        in_flight.push_back(*slot);
      }
    }
    for (auto s : in_flight) fb_.release(s, clock_);
    return latency;
  }

  /// Returns the fraction of previously filled slots that still hold their
  /// pre-mitigation contents.
  double apply_mitigation(const Mitigation& m) {
    if (m.stuffing_loads > fb_.capacity())
      throw Error(ErrorCode::ParameterError, "load stuffing count " + std::to_string(m.stuffing_loads) +
                                                 " exceeds fill-buffer capacity " +
                                                 std::to_string(fb_.capacity()));
    std::vector<std::optional<std::uint64_t>> before;
    for (const auto& e : fb_.entries())
      before.push_back(e.state == SlotState::Empty ? std::nullopt : std::optional(e.generation));

    if (m.flush_l1) l1_.clear();
    const Line dummy{};
    for (std::size_t i = 0; i < m.stuffing_loads; ++i) {
      PhysAddr line{kStuffingRegion + (stuffing_counter_++ % 4096) * kLineSize};
      auto slot = fb_.allocate(line, dummy, CoreId::c0, clock_);
      if (slot) fb_.release(*slot, clock_);
    }

    std::size_t filled = 0;
    std::size_t untouched = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      if (!before[i]) continue;
      ++filled;
      if (fb_[i].generation == *before[i]) ++untouched;
    }
    return filled == 0 ? 0.0 : static_cast<double>(untouched) / static_cast<double>(filled);
  }

  bool l1_contains(PhysAddr addr) const { return l1_.contains(addr.line_base().value); }
  std::size_t l1_size() const { return l1_.size(); }

  Line peek_line(PhysAddr addr) const {
    auto it = memory_.find(addr.line_base().value);
    return it == memory_.end() ? Line{} : it->second;
  }

  /// Backdoor initialisation of physical memory; no microarchitectural effect.
  void poke_line(PhysAddr addr, const Line& data) { memory_[addr.line_base().value] = data; }

 private:
  static constexpr std::uint64_t kStuffingRegion = 0xD000'0000ULL;

  static void validate(CoreId core) {
    if (index_of(core) > 1) throw Error(ErrorCode::ParameterError, "logical core must be 0 or 1");
  }

  PageTableEntry& pte_mut(Asid asid, VirtAddr v) {
    auto t = page_tables_.find(asid);
    if (t != page_tables_.end()) {
      auto e = t->second.find(v.page_base().value);
      if (e != t->second.end()) return e->second;
    }
    throw Error(ErrorCode::PageFault, "no mapping for " + hex_u64(v.value));
  }

  PhysAddr checked_access(Asid asid, VirtAddr v, Privilege priv, bool is_write, std::uint32_t& events) {
    auto& pte = pte_mut(asid, v);
    if (!pte.flags.present) throw Error(ErrorCode::PageFault, "page not present: " + hex_u64(v.value));
    if (priv == Privilege::User && !pte.flags.user_accessible)
      throw Error(ErrorCode::PermissionFault, "user access to supervisor page " + hex_u64(v.value));
    if (!pte.flags.accessed) {
      // The page-miss handler cannot set A/D bits; a microcode assist repeats the walk.
      ++assist_events_;
      events |= event::kAssist;
      pte.flags.accessed = true;
    }
    if (is_write) pte.flags.dirty = true;
    return pte.frame + v.page_offset();
  }

  Line& line_ref(PhysAddr line) { return memory_[line.value]; }

  std::optional<std::size_t> fill(CoreId core, PhysAddr line, const Line& data, std::uint32_t& events) {
    if (auto merged = fb_.find_in_flight(line)) {
      events |= event::kFbMerge;
      return merged;
    }
    auto slot = fb_.allocate(line, data, core, clock_);
    if (!slot) {
      events |= event::kFbStall;
      return std::nullopt;
    }
    ++fb_allocations_;
    events |= event::kFbAlloc;
    fb_.release(*slot, clock_);
    return slot;
  }

  void finish_write(CoreId core, AccessResult& r, const Line& data) {
    const PhysAddr line = r.paddr.line_base();
    // Stores always pass through a fill-buffer entry carrying the new line.
    auto slot = fb_.allocate(line, data, core, clock_);
    if (slot) {
      ++fb_allocations_;
      r.events |= event::kFbAlloc;
      fb_.release(*slot, clock_);
      r.fb_slot = slot;
    } else {
      r.events |= event::kFbStall;
    }
    if (l1_.contains(line.value)) r.events |= event::kL1Hit;
    l1_.insert(line.value);
  }

  MachineConfig config_;
  FillBuffer fb_;
  Tick clock_ = 0;
  std::unordered_map<Asid, std::unordered_map<std::uint64_t, PageTableEntry>> page_tables_;
  std::unordered_map<std::uint64_t, Line> memory_;
  std::unordered_set<std::uint64_t> l1_;
  std::uint64_t assist_events_ = 0;
  std::uint64_t fb_allocations_ = 0;
  std::uint64_t stuffing_counter_ = 0;
};

}  // namespace zl::uarch
