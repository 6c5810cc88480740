#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "zombieload/common.hpp"
#include "zombieload/sampler/variant.hpp"
#include "zombieload/uarch/interleave.hpp"
#include "zombieload/uarch/machine.hpp"

namespace zl::sampler {

using uarch::Asid;
using uarch::CoreId;
using uarch::Machine;
using uarch::VirtAddr;

enum class Truth : std::uint8_t { Victim, Background, Unknown };

inline std::string_view to_string(Truth t) {
  switch (t) {
    case Truth::Victim: return "victim";
    case Truth::Background: return "background";
    case Truth::Unknown: return "unknown";
  }
  return "?";
}

/// One leaked byte. `truth` is simulator ground truth and is not part of what
/// an attacker observes; see `ObservedSample`.
struct ZombieSample {
  Tick timestamp = 0;
  Byte byte_index = 0;
  Byte value = 0;
  Truth truth = Truth::Unknown;

  bool operator==(const ZombieSample&) const = default;
};

struct ObservedSample {
  Tick timestamp = 0;
  Byte byte_index = 0;
  Byte value = 0;

  bool operator==(const ObservedSample&) const = default;
};

inline ObservedSample observed(const ZombieSample& s) { return {s.timestamp, s.byte_index, s.value}; }

/// A whole line as seen from the transient domain in one attempt.
struct LineSample {
  Tick timestamp = 0;
  Line data{};
  Truth truth = Truth::Unknown;
};

/// Attacker-side addresses used to issue zombie loads.
struct AttackerProbe {
  Asid asid = 0;
  VirtAddr base;  // byte 0 of the probe line
  uarch::ZombieMode mode = uarch::ZombieMode::V1KernelAlias;
  CoreId core = CoreId::c1;

  VirtAddr at(unsigned byte_index) const { return base + (byte_index & 0x3F); }
};

inline constexpr Asid kAttackerAsid = 100;
inline constexpr unsigned kDefaultProbeLine = 63;

/// Sets up the aliasing needed by a variant: page p is mapped user-accessible
/// at v, and additionally through a supervisor-only direct-map alias (V1) or
/// a second user alias with a cleared accessed bit (V2).
inline AttackerProbe prepare_attacker(Machine& m, Variant variant, Asid asid = kAttackerAsid,
                                      unsigned probe_line = kDefaultProbeLine) {
  const uarch::PhysAddr frame{0x7F00'0000ULL};
  const VirtAddr v{0x0000'7F00'0000'0000ULL};
  const VirtAddr kernel_alias{0xFFFF'8880'0000'0000ULL + frame.value};
  const VirtAddr second_alias{v.value + 0x1000'0000ULL};

  if (!m.find_pte(asid, v)) m.map_page(asid, v, frame, {});
  AttackerProbe probe;
  probe.asid = asid;
  if (variant == Variant::V1) {
    if (!m.find_pte(asid, kernel_alias)) {
      uarch::PteFlags f;
      f.user_accessible = false;
      f.huge = true;
      m.map_page(asid, kernel_alias, frame, f);
    }
    probe.base = kernel_alias + probe_line * kLineSize;
    probe.mode = uarch::ZombieMode::V1KernelAlias;
  } else {
    if (!m.find_pte(asid, second_alias)) {
      uarch::PteFlags f;
      f.accessed = false;
      m.map_page(asid, second_alias, frame, f);
    }
    m.set_accessed(asid, second_alias, false);
    probe.base = second_alias + probe_line * kLineSize;
    probe.mode = uarch::ZombieMode::V2ClearedAccessed;
  }
  return probe;
}

/// Drives attempts at the variant's rate over [start, start + duration).
/// Attempt k fires at start + floor((k + u_k) / rate) with u_k ~ U[0,1), so
/// the count is exact to within one attempt. `advance(t)` brings the victim
/// up to the attempt time first. `fn(tick, line, truth)` receives the line
/// visible in the transient domain; if it returns bool, false stops the run.
/// Returns the tick of the last attempt (or start if none fired).
template <class Advance, class Fn>
Tick run_attempts(Machine& m, const VariantConfig& vcfg, const AttackerProbe& probe, Tick start, Tick duration,
                  std::uint64_t seed, Advance&& advance, Fn&& fn) {
  Tick last = start;
  if (duration == 0 || vcfg.bytes_per_second <= 0) return last;
  Rng rng(seed);
  const double interval = kTicksPerSecond / vcfg.bytes_per_second;
  const Tick end = saturating_add(start, duration);
  auto deliver = [&](Tick t, const Line& line, Truth truth) -> bool {
    if constexpr (std::is_same_v<std::invoke_result_t<Fn&, Tick, const Line&, Truth>, bool>) {
      return fn(t, line, truth);
    } else {
      fn(t, line, truth);
      return true;
    }
  };
  for (std::uint64_t k = 0;; ++k) {
    const Tick t = start + static_cast<Tick>(std::floor((static_cast<double>(k) + uniform01(rng)) * interval));
    if (t >= end) break;
    last = t;
    advance(t);
    m.advance_to(t);
    bool keep_going;
    if (bernoulli(rng, vcfg.true_positive_rate)) {
      std::optional<uarch::ZombieLine> view;
      try {
        view = m.zombie_line(probe.core, probe.asid, probe.base, probe.mode);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoStaleData) throw;
      }
      if (view) {
        keep_going = deliver(t, view->data, view->owner == CoreId::c0 ? Truth::Victim : Truth::Background);
        if (!keep_going) break;
        continue;
      }
    }
    keep_going = deliver(t, vcfg.background.draw(rng), Truth::Background);
    if (!keep_going) break;
  }
  return last;
}

template <class Fn>
void for_each_attempt(Machine& m, const VariantConfig& vcfg, const AttackerProbe& probe, Tick start,
                      Tick duration, std::uint64_t seed, uarch::OpCursor* victim, Fn&& fn) {
  run_attempts(m, vcfg, probe, start, duration, seed, [&](Tick t) {
    if (victim) victim->advance(m, t);
  }, std::forward<Fn>(fn));
  if (victim && duration > 0) victim->advance(m, saturating_add(start, duration) - 1);
}

inline std::vector<LineSample> sample_lines(Machine& m, const VariantConfig& vcfg, const AttackerProbe& probe,
                                            Tick start, Tick duration, std::uint64_t seed,
                                            uarch::OpCursor* victim = nullptr) {
  std::vector<LineSample> out;
  for_each_attempt(m, vcfg, probe, start, duration, seed, victim,
                   [&](Tick t, const Line& line, Truth truth) { out.push_back({t, line, truth}); });
  return out;
}

/// Which bytes of the leaked line an attempt transfers out of the transient
/// domain: one index per attempt in rotation, or all listed indices at once.
struct ByteSelection {
  std::vector<Byte> indices{0};
  bool all_per_attempt = false;
};

inline std::vector<ZombieSample> sample_stream(Machine& m, const VariantConfig& vcfg, const AttackerProbe& probe,
                                               Tick start, Tick duration, std::uint64_t seed,
                                               const ByteSelection& sel = {}, uarch::OpCursor* victim = nullptr) {
  if (sel.indices.empty()) throw Error(ErrorCode::ParameterError, "byte selection is empty");
  std::vector<ZombieSample> out;
  std::size_t rotation = 0;
  for_each_attempt(m, vcfg, probe, start, duration, seed, victim, [&](Tick t, const Line& line, Truth truth) {
    if (sel.all_per_attempt) {
      for (Byte i : sel.indices) out.push_back({t, i, line[i & 0x3F], truth});
    } else {
      Byte i = sel.indices[rotation++ % sel.indices.size()];
      out.push_back({t, i, line[i & 0x3F], truth});
    }
  });
  return out;
}

/// Keeps samples with timestamp in [t, t + window] for some trigger t.
/// Both inputs must be sorted by tick. An infinite window disables filtering.
template <class Sample>
std::vector<Sample> triggered_samples(std::span<const Sample> stream, std::span<const Tick> triggers,
                                      Tick window) {
  std::vector<Sample> out;
  if (triggers.empty()) return out;
  if (window == kForever) return {stream.begin(), stream.end()};
  std::size_t ti = 0;
  for (const auto& s : stream) {
    // Advance to the last trigger at or before the sample.
    while (ti + 1 < triggers.size() && triggers[ti + 1] <= s.timestamp) ++ti;
    if (triggers[ti] <= s.timestamp && s.timestamp - triggers[ti] <= window) out.push_back(s);
  }
  return out;
}

inline constexpr Tick kDefaultTriggerWindow = 50;

enum class TriggerMode : std::uint8_t { FlushReloadHit };

struct TriggerSpec {
  Asid asid = 0;
  VirtAddr watched_line;
  TriggerMode mode = TriggerMode::FlushReloadHit;
};

/// Simulated Flush+Reload on the watched code line: every `probe_interval`
/// ticks the attacker reloads the line and reports a hit if the victim touched
/// it since the previous probe.
inline std::vector<Tick> flush_reload_monitor(std::span<const uarch::TimedOp> victim, const TriggerSpec& spec,
                                              Tick probe_interval, Tick start, Tick end) {
  if (probe_interval == 0) throw Error(ErrorCode::ParameterError, "probe interval must be > 0");
  std::vector<Tick> hits;
  const auto watched = spec.watched_line.line_base();
  for (const auto& op : victim) {
    if (op.at < start || op.at >= end) continue;
    if (op.op.asid != spec.asid || op.op.vaddr.line_base() != watched) continue;
    if (op.op.kind != uarch::OpKind::Fetch && op.op.kind != uarch::OpKind::Read) continue;
    const Tick probe = start + ((op.at - start) / probe_interval + 1) * probe_interval;
    if (probe >= end) continue;
    if (hits.empty() || hits.back() != probe) hits.push_back(probe);
  }
  return hits;
}

struct ByteDistribution {
  std::array<std::uint64_t, 256> counts{};

  void add(Byte v, std::uint64_t n = 1) { counts[v] += n; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts) t += c;
    return t;
  }

  bool empty() const { return total() == 0; }

  /// Additively smoothed probability, (count + eps) / (total + 256 eps).
  double probability(Byte v, double smoothing = 0.0) const {
    const double denom = static_cast<double>(total()) + 256.0 * smoothing;
    return denom <= 0 ? 0.0 : (static_cast<double>(counts[v]) + smoothing) / denom;
  }

  Byte argmax() const {
    return static_cast<Byte>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }

  bool operator==(const ByteDistribution&) const = default;
};

inline ByteDistribution histogram(std::span<const ZombieSample> stream, std::optional<Byte> index_filter = {}) {
  ByteDistribution d;
  for (const auto& s : stream)
    if (!index_filter || s.byte_index == *index_filter) d.add(s.value);
  return d;
}

inline void write_distribution_csv(std::ostream& os, const ByteDistribution& d) {
  os << "value,count\n";
  for (unsigned v = 0; v < 256; ++v) os << v << ',' << d.counts[v] << '\n';
}

inline void write_samples_csv(std::ostream& os, std::span<const ZombieSample> stream) {
  os << "timestamp,byte_index,value\n";
  for (const auto& s : stream)
    os << s.timestamp << ',' << unsigned(s.byte_index) << ",0x" << hex_byte(s.value) << '\n';
}

inline void write_samples_debug_csv(std::ostream& os, std::span<const ZombieSample> stream) {
  os << "timestamp,byte_index,value,truth\n";
  for (const auto& s : stream)
    os << s.timestamp << ',' << unsigned(s.byte_index) << ",0x" << hex_byte(s.value) << ',' << to_string(s.truth)
       << '\n';
}

/// Parses the attacker-visible sample CSV; truth labels come back Unknown.
inline std::vector<ZombieSample> read_samples_csv(std::istream& is) {
  std::vector<ZombieSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    std::stringstream ss(line);
    std::string ts, idx, val;
    if (!std::getline(ss, ts, ',') || !std::getline(ss, idx, ',') || !std::getline(ss, val, ','))
      throw Error(ErrorCode::ConfigError, "samples csv line " + std::to_string(lineno) + ": expected 3 columns");
    try {
      ZombieSample s;
      s.timestamp = std::stoull(ts);
      s.byte_index = static_cast<Byte>(std::stoul(idx) & 0x3F);
      s.value = static_cast<Byte>(std::stoul(val, nullptr, 0));
      out.push_back(s);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ConfigError, "samples csv line " + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

}  // namespace zl::sampler
