#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "zombieload/sampler/sampler.hpp"
#include "zombieload/uarch/interleave.hpp"
#include "zombieload/uarch/machine.hpp"

namespace zl::recover {

using sampler::ByteDistribution;

struct FrequencyDelta {
  ByteDistribution active;
  ByteDistribution baseline;
  std::array<std::int64_t, 256> delta{};
};

inline FrequencyDelta frequency_delta(const ByteDistribution& active, const ByteDistribution& baseline) {
  FrequencyDelta f{active, baseline, {}};
  for (unsigned v = 0; v < 256; ++v)
    f.delta[v] = static_cast<std::int64_t>(active.counts[v]) - static_cast<std::int64_t>(baseline.counts[v]);
  return f;
}

enum class LeakMode : std::uint8_t { Raw, Ascii7 };

struct TargetedOptions {
  LeakMode mode = LeakMode::Raw;
  bool exclude_common = true;  // drop 0x00 and 0xFF, which kernel noise saturates
  double z = 4.5;              // required excess over counting noise, in standard deviations
  double drift = 0.7;          // tolerated relative change of a value's baseline frequency
};

struct TargetedResult {
  Byte value = 0;
  double confidence = 0;  // share of the positive eligible delta held by `value`
  FrequencyDelta freq;
};

inline bool eligible(unsigned v, const TargetedOptions& opt) {
  if (opt.exclude_common && (v == 0x00 || v == 0xFF)) return false;
  if (opt.mode == LeakMode::Ascii7 && v >= 0x80) return false;
  return true;
}

/// Picks the value with the largest excess in the active run. The excess has
/// to clear `z` standard deviations of the difference of two Poisson counts
/// plus the drift allowance on the value's baseline count; otherwise it may
/// be nothing but background activity changing between the two runs.
inline TargetedResult analyze(const FrequencyDelta& f, const TargetedOptions& opt = {}) {
  int best = -1;
  std::int64_t positive = 0;
  for (unsigned v = 0; v < 256; ++v) {
    if (!eligible(v, opt)) continue;
    if (f.delta[v] > 0) positive += f.delta[v];
    if (best < 0 || f.delta[v] > f.delta[best]) best = static_cast<int>(v);
  }
  if (best < 0 || f.delta[best] <= 0) throw Error(ErrorCode::NoSignal, "no value is more frequent in the active run");
  const double noise = std::sqrt(static_cast<double>(f.active.counts[best] + f.baseline.counts[best]));
  const double allowance = opt.z * noise + opt.drift * static_cast<double>(f.baseline.counts[best]);
  if (static_cast<double>(f.delta[best]) < allowance)
    throw Error(ErrorCode::NoSignal, "largest excess is within run-to-run variation");
  return {static_cast<Byte>(best), static_cast<double>(f.delta[best]) / static_cast<double>(positive), f};
}

/// Two runs against fresh machines: one with the gadget mispredicting
/// (`build(machine, true)`) and a baseline with in-bounds calls only. Each
/// run samples the secret's byte offset for `probe_seconds` of simulated time.
template <class BuildVictim>
TargetedResult targeted_leak(const uarch::MachineConfig& mc, const sampler::VariantConfig& vcfg, BuildVictim&& build,
                             uarch::VirtAddr secret_addr, double probe_seconds, const TargetedOptions& opt,
                             std::uint64_t seed) {
  if (probe_seconds <= 0) throw Error(ErrorCode::ParameterError, "probe time must be positive");
  const Tick duration = seconds_to_ticks(probe_seconds);
  const Byte index = static_cast<Byte>(secret_addr.byte_offset());
  auto run = [&](bool active, std::uint64_t s) {
    uarch::Machine m(mc);
    const std::vector<uarch::TimedOp> ops = build(m, active);
    const auto probe = sampler::prepare_attacker(m, vcfg.variant);
    uarch::OpCursor cursor(ops);
    ByteDistribution d;
    sampler::for_each_attempt(m, vcfg, probe, 0, duration, s, &cursor,
                              [&](Tick, const Line& line, sampler::Truth) { d.add(line[index]); });
    return d;
  };
  const auto active = run(true, mix_seed(seed, 1));
  const auto baseline = run(false, mix_seed(seed, 2));
  return analyze(frequency_delta(active, baseline), opt);
}

}  // namespace zl::recover
