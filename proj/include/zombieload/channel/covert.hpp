#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "zombieload/channel/packet.hpp"
#include "zombieload/sampler/sampler.hpp"
#include "zombieload/uarch/interleave.hpp"
#include "zombieload/uarch/machine.hpp"

namespace zl::channel {

using uarch::Machine;
using uarch::TimedOp;

/// Where the sender keeps its packet copies. Each copy lives at byte 0 of its
/// own line so that repeated loads occupy distinct fill-buffer entries.
struct SenderLayout {
  uarch::Asid asid = 0;
  uarch::VirtAddr base{0x5000'0000ULL};
  uarch::PhysAddr frame{0x0300'0000ULL};

  uarch::VirtAddr line(std::size_t i) const { return base + (1 + i) * kLineSize; }
};

struct SenderConfig {
  std::size_t repeats = 64;   // loads per packet
  std::size_t addresses = 2;  // distinct lines the loads are spread over
  Tick op_spacing = 2;
  Byte prefix = kDefaultPrefix;

  Tick slot_ticks() const { return static_cast<Tick>(addresses + 2 * repeats) * op_spacing; }
};

inline void setup_sender(Machine& m, const SenderLayout& layout = {}) {
  if (!m.find_pte(layout.asid, layout.base)) m.map_page(layout.asid, layout.base, layout.frame, {});
}

inline Line packet_line(const Packet& p) {
  Line l{};
  auto b = p.bytes();
  std::copy(b.begin(), b.end(), l.begin());
  return l;
}

/// Ops for one transmission slot: write the packet into every copy, then
/// flush and reload the copies round-robin `repeats` times.
inline void append_slot(std::vector<TimedOp>& out, Tick start, const Packet& p, const SenderConfig& cfg,
                        const SenderLayout& layout = {}) {
  if (cfg.addresses == 0) throw Error(ErrorCode::ParameterError, "sender needs at least one address");
  const Line data = packet_line(p);
  Tick t = start;
  for (std::size_t a = 0; a < cfg.addresses; ++a, t += cfg.op_spacing)
    out.push_back({t, uarch::CoreId::c0, uarch::Op::write_line(layout.asid, layout.line(a), data)});
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const auto addr = layout.line(r % cfg.addresses);
    out.push_back({t, uarch::CoreId::c0, uarch::Op::flush(layout.asid, addr)});
    t += cfg.op_spacing;
    out.push_back({t, uarch::CoreId::c0, uarch::Op::read(layout.asid, addr)});
    t += cfg.op_spacing;
  }
}

/// Open-loop sender: one slot per payload byte, sequence numbers mod 256.
inline std::vector<TimedOp> send(std::span<const Byte> payload, Machine& m, const SenderConfig& cfg = {},
                                 Tick start = 0, const SenderLayout& layout = {}) {
  if (payload.empty()) throw Error(ErrorCode::ParameterError, "payload must be non-empty");
  setup_sender(m, layout);
  std::vector<TimedOp> ops;
  ops.reserve(payload.size() * (cfg.addresses + 2 * cfg.repeats));
  for (std::size_t i = 0; i < payload.size(); ++i)
    append_slot(ops, start + i * cfg.slot_ticks(), encode_packet(payload[i], static_cast<Byte>(i), cfg.prefix),
                cfg, layout);
  return ops;
}

struct ReceiveStats {
  std::size_t packets_ok = 0;        // unique packets accepted
  std::size_t packets_rejected = 0;  // prefix matched, checksum did not
  std::size_t prefix_mismatch = 0;
  std::size_t duplicates = 0;
  std::optional<std::uint64_t> gap;  // first missing sequence, if later ones arrived

  bool operator==(const ReceiveStats&) const = default;
};

inline constexpr std::size_t kSequenceWindow = 128;

/// Architectural side of the receiver: runs the transient check through two
/// oracle passes (data, then sequence number) and reassembles in order.
class Receiver {
 public:
  explicit Receiver(Byte expected_prefix = kDefaultPrefix) : prefix_(expected_prefix) {}

  /// Returns the absolute sequence number of a newly accepted packet.
  std::optional<std::uint64_t> on_candidate(const std::array<Byte, 4>& bytes) {
    const Packet p = Packet::from_bytes(bytes);
    if (p.prefix != prefix_) {
      ++stats_.prefix_mismatch;
      return std::nullopt;
    }
    oracle_.touch(transient_verify(p));
    auto data = oracle_.scan();
    if (data.empty()) {
      ++stats_.packets_rejected;
      return std::nullopt;
    }
    oracle_.touch(transient_verify_seq(p));
    auto seq = oracle_.scan();
    if (seq.empty()) {
      ++stats_.packets_rejected;
      return std::nullopt;
    }

    const unsigned offset = static_cast<Byte>(seq.front() - static_cast<Byte>(base_));
    if (offset >= kSequenceWindow) {
      ++stats_.duplicates;  // behind the window: already delivered
      return std::nullopt;
    }
    const std::uint64_t abs = base_ + offset;
    if (!pending_.try_emplace(abs, data.front()).second) {
      ++stats_.duplicates;
      return std::nullopt;
    }
    ++stats_.packets_ok;
    for (auto it = pending_.find(base_); it != pending_.end(); it = pending_.find(base_)) {
      delivered_.push_back(it->second);
      pending_.erase(it);
      ++base_;
    }
    return abs;
  }

  std::uint64_t base() const { return base_; }
  const std::vector<Byte>& delivered() const { return delivered_; }

  ReceiveStats stats() const {
    ReceiveStats s = stats_;
    if (!pending_.empty()) s.gap = base_;
    return s;
  }

 private:
  Byte prefix_;
  OracleArray oracle_;
  std::uint64_t base_ = 0;
  std::map<std::uint64_t, Byte> pending_;
  std::vector<Byte> delivered_;
  ReceiveStats stats_;
};

struct ReceiveResult {
  std::vector<Byte> payload;
  ReceiveStats stats;
};

/// Collates samples sharing a timestamp into 4-byte packet candidates (byte
/// indices 0..3) and feeds them to a Receiver. Payload is truncated at the
/// first gap.
inline ReceiveResult receive(std::span<const sampler::ZombieSample> samples, Byte expected_prefix = kDefaultPrefix) {
  Receiver rx(expected_prefix);
  std::size_t i = 0;
  while (i < samples.size()) {
    const Tick t = samples[i].timestamp;
    std::array<Byte, 4> bytes{};
    unsigned seen = 0;
    for (; i < samples.size() && samples[i].timestamp == t; ++i) {
      if (samples[i].byte_index < 4) {
        bytes[samples[i].byte_index] = samples[i].value;
        seen |= 1u << samples[i].byte_index;
      }
    }
    if (seen == 0xF) rx.on_candidate(bytes);
  }
  return {rx.delivered(), rx.stats()};
}

struct LoopbackConfig {
  SenderConfig sender;
  std::size_t window = kSequenceWindow;
  Tick ack_latency = 2000;  // delay before the sender learns of a receipt
  double max_seconds = 3600;
};

struct LoopbackResult {
  std::vector<Byte> received;
  ReceiveStats stats;
  double simulated_seconds = 0;
  double kbit_per_s = 0;
  std::size_t payload_errors = 0;
  std::size_t slots_sent = 0;
  bool complete = false;
};

/// Sender and receiver sharing one physical core. The sender cycles through
/// the unacknowledged packets of a 128-packet window, one slot each; the
/// receiver samples at the variant's rate. Receipts reach the sender after
/// `ack_latency` ticks.
inline LoopbackResult run_loopback(Machine& m, const sampler::VariantConfig& vcfg, std::span<const Byte> payload,
                                   const LoopbackConfig& cfg, std::uint64_t seed) {
  if (payload.empty()) throw Error(ErrorCode::ParameterError, "payload must be non-empty");
  if (cfg.window == 0 || cfg.window > kSequenceWindow)
    throw Error(ErrorCode::ParameterError, "sequence window must be in [1,128]");
  const SenderLayout layout;
  setup_sender(m, layout);
  const auto probe = sampler::prepare_attacker(m, vcfg.variant);
  const std::size_t n = payload.size();
  const Tick start = m.now();

  Receiver rx(cfg.sender.prefix);
  std::vector<Tick> ack_known(n, kForever);
  std::size_t sender_base = 0;
  std::size_t cursor = 0;
  std::vector<TimedOp> slot_ops;
  std::size_t slot_pos = 0;
  Tick next_slot = start;
  LoopbackResult result;

  auto plan_slot = [&](Tick t) -> bool {
    while (sender_base < n && ack_known[sender_base] <= t) ++sender_base;
    if (sender_base >= n) return false;
    const std::size_t hi = std::min(n, sender_base + cfg.window);
    if (cursor < sender_base || cursor >= hi) cursor = sender_base;
    const std::size_t span = hi - sender_base;
    for (std::size_t k = 0; k < span; ++k) {
      const std::size_t i = sender_base + (cursor - sender_base + k) % span;
      if (ack_known[i] <= t) continue;
      cursor = i + 1;
      slot_ops.clear();
      slot_pos = 0;
      append_slot(slot_ops, t, encode_packet(payload[i], static_cast<Byte>(i), cfg.sender.prefix), cfg.sender,
                  layout);
      ++result.slots_sent;
      return true;
    }
    return false;
  };

  auto advance = [&](Tick t) {
    for (;;) {
      while (slot_pos < slot_ops.size() && slot_ops[slot_pos].at <= t) {
        const auto& op = slot_ops[slot_pos++];
        m.advance_to(op.at);
        uarch::execute(m, op.core, op.op);
      }
      if (slot_pos < slot_ops.size() || next_slot > t) break;
      if (!plan_slot(next_slot)) slot_ops.clear(), slot_pos = 0;
      next_slot += cfg.sender.slot_ticks();
    }
  };

  Tick finished = start;
  sampler::run_attempts(m, vcfg, probe, start, seconds_to_ticks(cfg.max_seconds), seed, advance,
                        [&](Tick t, const Line& line, sampler::Truth) -> bool {
                          auto abs = rx.on_candidate({line[0], line[1], line[2], line[3]});
                          if (abs && *abs < n) ack_known[*abs] = t + cfg.ack_latency;
                          finished = t;
                          return rx.delivered().size() < n;
                        });

  result.received = rx.delivered();
  result.stats = rx.stats();
  result.complete = result.received.size() >= n;
  result.simulated_seconds = ticks_to_seconds(finished - start);
  result.kbit_per_s =
      result.simulated_seconds > 0 ? 8.0 * static_cast<double>(result.stats.packets_ok) / result.simulated_seconds / 1000.0 : 0;
  for (std::size_t i = 0; i < n; ++i)
    if (i >= result.received.size() || result.received[i] != payload[i]) ++result.payload_errors;
  return result;
}

}  // namespace zl::channel
