#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "zombieload/common.hpp"
#include "zombieload/uarch/machine.hpp"

namespace zl::uarch {

enum class OpKind : std::uint8_t {
  Read,
  Write,
  WriteLine,
  Flush,
  Zombie,
  SpecLoad,
  StoreNt,
  Fetch,  // instruction fetch; only visible to a Flush+Reload monitor
  Idle,
};

inline std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::Read: return "read";
    case OpKind::Write: return "write";
    case OpKind::WriteLine: return "write-line";
    case OpKind::Flush: return "clflush";
    case OpKind::Zombie: return "zombie-load";
    case OpKind::SpecLoad: return "spec-load";
    case OpKind::StoreNt: return "store-nt";
    case OpKind::Fetch: return "fetch";
    case OpKind::Idle: return "idle";
  }
  return "?";
}

inline std::optional<OpKind> parse_op_kind(std::string_view s) {
  for (auto k : {OpKind::Read, OpKind::Write, OpKind::WriteLine, OpKind::Flush, OpKind::Zombie,
                 OpKind::SpecLoad, OpKind::StoreNt, OpKind::Fetch, OpKind::Idle})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct Op {
  OpKind kind = OpKind::Idle;
  Asid asid = 0;
  VirtAddr vaddr;
  Privilege priv = Privilege::User;
  ZombieMode mode = ZombieMode::V1KernelAlias;
  Byte value = 0;
  Line line{};

  static Op read(Asid a, VirtAddr v, Privilege p = Privilege::User) { return {OpKind::Read, a, v, p}; }
  static Op write(Asid a, VirtAddr v, Byte b, Privilege p = Privilege::User) {
    Op op{OpKind::Write, a, v, p};
    op.value = b;
    return op;
  }
  static Op write_line(Asid a, VirtAddr v, const Line& l, Privilege p = Privilege::User) {
    Op op{OpKind::WriteLine, a, v, p};
    op.line = l;
    return op;
  }
  static Op flush(Asid a, VirtAddr v) { return {OpKind::Flush, a, v}; }
  static Op zombie(Asid a, VirtAddr v, ZombieMode m) {
    Op op{OpKind::Zombie, a, v};
    op.mode = m;
    return op;
  }
  static Op spec_load(Asid a, VirtAddr v) { return {OpKind::SpecLoad, a, v}; }
  static Op store_nt(Asid a, VirtAddr v, const Line& l) {
    Op op{OpKind::StoreNt, a, v};
    op.line = l;
    return op;
  }
  static Op fetch(Asid a, VirtAddr v) { return {OpKind::Fetch, a, v}; }
  static Op idle() { return {}; }
};

struct TimedOp {
  Tick at = 0;
  CoreId core = CoreId::c0;
  Op op;
};

/// Executes one op; faults are reported as events instead of thrown.
inline AccessResult execute(Machine& m, CoreId core, const Op& op) {
  AccessResult r;
  try {
    switch (op.kind) {
      case OpKind::Read: return m.load(core, op.asid, op.vaddr, op.priv);
      case OpKind::Write: return m.write_arch(core, op.asid, op.vaddr, op.value, op.priv);
      case OpKind::WriteLine: return m.write_line(core, op.asid, op.vaddr, op.line, op.priv);
      case OpKind::Flush:
        r.paddr = m.translate(op.asid, op.vaddr);
        m.clflush(core, op.asid, op.vaddr);
        r.events |= event::kFlush;
        return r;
      case OpKind::Zombie: {
        r.paddr = m.translate(op.asid, op.vaddr);
        auto leak = m.zombie_load(core, op.asid, op.vaddr, op.mode);
        r.value = leak.value;
        r.fb_slot = leak.source_entry;
        r.events |= event::kLeak;
        return r;
      }
      case OpKind::SpecLoad: return m.load_speculative(core, op.asid, op.vaddr);
      case OpKind::StoreNt:
        r.paddr = m.translate(op.asid, op.vaddr);
        m.store_nt(core, op.asid, op.vaddr, op.line);
        r.events |= event::kFbAlloc;
        return r;
      case OpKind::Fetch:
      case OpKind::Idle: return r;
    }
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::PageFault: r.events |= event::kPageFault; break;
      case ErrorCode::PermissionFault: r.events |= event::kPermissionFault; break;
      case ErrorCode::NoStaleData: r.events |= event::kNoStaleData; break;
      case ErrorCode::ModeMismatch: r.events |= event::kModeMismatch; break;
      default: throw;
    }
  }
  return r;
}

/// Replays a tick-sorted op stream against a machine as simulated time advances.
class OpCursor {
 public:
  explicit OpCursor(std::span<const TimedOp> ops) : ops_(ops) {}

  void advance(Machine& m, Tick t) {
    while (next_ < ops_.size() && ops_[next_].at <= t) {
      const auto& op = ops_[next_++];
      m.advance_to(op.at);
      execute(m, op.core, op.op);
    }
    m.advance_to(t);
  }

  bool done() const { return next_ >= ops_.size(); }
  std::size_t position() const { return next_; }

 private:
  std::span<const TimedOp> ops_;
  std::size_t next_ = 0;
};

struct TraceRecord {
  Tick tick = 0;
  CoreId core = CoreId::c0;
  OpKind op = OpKind::Idle;
  VirtAddr vaddr;
  std::optional<PhysAddr> paddr;
  std::optional<std::size_t> fb_slot;
  std::optional<Byte> value;
  std::uint32_t events = 0;

  bool operator==(const TraceRecord&) const = default;
};

using Trace = std::vector<TraceRecord>;

enum class ScheduleKind : std::uint8_t { Alternating, Random };

struct Schedule {
  ScheduleKind kind = ScheduleKind::Random;
  std::uint64_t seed = 0;
  double victim_share = 0.5;  // Random only
};

/// Runs the victim stream on core 0 and the attacker stream on core 1, one op
/// per tick, in an order fixed by the schedule.
inline Trace run_interleaved(Machine& m, std::span<const Op> victim, std::span<const Op> attacker,
                             const Schedule& schedule) {
  Trace trace;
  trace.reserve(victim.size() + attacker.size());
  Rng rng(schedule.seed);
  std::size_t vi = 0;
  std::size_t ai = 0;
  bool victim_turn = true;
  while (vi < victim.size() || ai < attacker.size()) {
    bool pick_victim;
    if (vi >= victim.size()) {
      pick_victim = false;
    } else if (ai >= attacker.size()) {
      pick_victim = true;
    } else if (schedule.kind == ScheduleKind::Alternating) {
      pick_victim = victim_turn;
      victim_turn = !victim_turn;
    } else {
      pick_victim = bernoulli(rng, schedule.victim_share);
    }
    const CoreId core = pick_victim ? CoreId::c0 : CoreId::c1;
    const Op& op = pick_victim ? victim[vi++] : attacker[ai++];
    AccessResult r = execute(m, core, op);
    TraceRecord rec;
    rec.tick = m.now();
    rec.core = core;
    rec.op = op.kind;
    rec.vaddr = op.vaddr;
    if (!(r.events & (event::kPageFault | event::kPermissionFault)) && op.kind != OpKind::Idle &&
        op.kind != OpKind::Fetch)
      rec.paddr = r.paddr;
    rec.fb_slot = r.fb_slot;
    rec.value = r.value;
    rec.events = r.events;
    trace.push_back(rec);
    m.tick();
  }
  return trace;
}

inline void write_trace_csv(std::ostream& os, const Trace& trace) {
  os << "tick,core,op,vaddr,paddr,fb_slot,value,event\n";
  for (const auto& r : trace) {
    os << r.tick << ',' << index_of(r.core) << ',' << to_string(r.op) << ',' << hex_u64(r.vaddr.value) << ',';
    if (r.paddr) os << hex_u64(r.paddr->value);
    os << ',';
    if (r.fb_slot) os << *r.fb_slot;
    os << ',';
    if (r.value) os << "0x" << hex_byte(*r.value);
    os << ',' << event::to_string(r.events) << '\n';
  }
}

}  // namespace zl::uarch
