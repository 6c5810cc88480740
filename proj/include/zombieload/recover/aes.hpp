#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "zombieload/recover/combine.hpp"
#include "zombieload/recover/sliding.hpp"
#include "zombieload/sampler/sampler.hpp"

namespace zl::recover {

using sampler::ByteDistribution;

/// A byte leaked through one of the attacker's channels: either key byte
/// `channel` or a domino byte computed in the transient domain.
struct ChannelSample {
  Tick timestamp = 0;
  std::uint16_t channel = 0;
  Byte value = 0;
  sampler::Truth truth = sampler::Truth::Unknown;
};

struct AesAttackConfig {
  std::size_t budget_loads = 10'000;
  std::size_t key_bytes = 16;
  std::size_t top_n = 16;
  unsigned k = 4;
  Tick trigger_window = sampler::kDefaultTriggerWindow;
  Tick probe_interval = 10;
  double smoothing = 1.0;
};

struct AesResult {
  std::vector<Byte> key;                  // best candidate
  std::size_t truth_rank = 0;             // 1-based; 0 if unknown or outside top_n
  std::size_t loads_used = 0;
  std::size_t samples_used = 0;           // after trigger filtering
  std::optional<double> entropy_bits;     // log2(truth_rank)
  std::vector<KeyHypothesis> candidates;
  std::vector<ByteDistribution> per_byte;
  std::vector<ByteDistribution> per_domino;
};

/// Samples continuously while the victim runs, rotating through one channel
/// per key byte and one per adjacent-pair domino, keeps only attempts shortly
/// after a Flush+Reload trigger on the victim's code line, and combines the
/// resulting distributions. The attack ends after `budget_loads` triggers.
inline AesResult recover_aes(uarch::Machine& m, const sampler::VariantConfig& vcfg,
                             std::span<const uarch::TimedOp> victim, const sampler::TriggerSpec& trigger,
                             const AesAttackConfig& cfg, std::uint64_t seed,
                             std::span<const Byte> truth = {}) {
  if (cfg.budget_loads == 0) throw Error(ErrorCode::InsufficientData, "zero victim-load budget");
  if (cfg.key_bytes < 2 || cfg.key_bytes > kLineSize)
    throw Error(ErrorCode::ParameterError, "key length must be 2..64 bytes");
  const Tick start = m.now();
  auto triggers = sampler::flush_reload_monitor(victim, trigger, cfg.probe_interval, start, kForever);
  if (triggers.empty()) throw Error(ErrorCode::InsufficientData, "victim never hit the trigger line");
  if (triggers.size() > cfg.budget_loads) triggers.resize(cfg.budget_loads);

  AesResult res;
  res.loads_used = triggers.size();
  const Tick end = triggers.back() + cfg.trigger_window + 1;
  const std::size_t nb = cfg.key_bytes;
  const std::size_t channels = 2 * nb - 1;

  const auto probe = sampler::prepare_attacker(m, vcfg.variant);
  uarch::OpCursor cursor(victim);
  std::vector<ChannelSample> stream;
  std::size_t attempt = 0;
  sampler::for_each_attempt(m, vcfg, probe, start, end - start, seed, &cursor,
                            [&](Tick t, const Line& line, sampler::Truth truth_label) {
                              const auto c = static_cast<std::uint16_t>(attempt++ % channels);
                              const Byte v = c < nb ? line[c] : domino(line[c - nb], line[c - nb + 1], cfg.k);
                              stream.push_back({t, c, v, truth_label});
                            });
  const auto kept = sampler::triggered_samples<ChannelSample>(stream, triggers, cfg.trigger_window);
  res.samples_used = kept.size();

  res.per_byte.resize(nb);
  res.per_domino.resize(nb - 1);
  for (const auto& s : kept) {
    if (s.channel < nb) res.per_byte[s.channel].add(s.value);
    else res.per_domino[s.channel - nb].add(s.value);
  }
  res.candidates = combine_key(res.per_byte, res.per_domino, cfg.top_n, {cfg.k, cfg.smoothing});
  res.key = res.candidates.front().bytes;
  if (!truth.empty()) {
    res.truth_rank = rank_of(res.candidates, truth);
    if (res.truth_rank > 0) res.entropy_bits = std::log2(static_cast<double>(res.truth_rank));
  }
  return res;
}

struct SlidingAttackConfig {
  std::size_t key_bytes = 16;
  std::size_t top_n = 16;
  Tick duration = 2'000'000;
  FilterOptions filter;
  double smoothing = 1.0;
};

struct SlidingResult {
  std::vector<Byte> key;
  std::size_t truth_rank = 0;
  std::optional<double> entropy_bits;
  std::size_t removed = 0;
  bool filter_warning = false;
  std::size_t samples = 0;
  std::vector<KeyHypothesis> candidates;
  std::vector<ByteDistribution> per_byte;  // after filtering
};

/// Attack on a victim that keeps reloading one secret line: each attempt
/// leaks a key byte or one of 7 domino bytes (k = 1..7) per adjacent pair.
/// The dominoes first prune candidates, then the k = 4 ones feed combine_key.
inline SlidingResult recover_sliding(uarch::Machine& m, const sampler::VariantConfig& vcfg,
                                     std::span<const uarch::TimedOp> victim, const SlidingAttackConfig& cfg,
                                     std::uint64_t seed, std::span<const Byte> truth = {}) {
  const std::size_t nb = cfg.key_bytes;
  if (nb < 2 || nb > kLineSize) throw Error(ErrorCode::ParameterError, "key length must be 2..64 bytes");
  const std::size_t channels = nb + 7 * (nb - 1);
  const auto probe = sampler::prepare_attacker(m, vcfg.variant);
  uarch::OpCursor cursor(victim);

  std::vector<ByteDistribution> per_byte(nb);
  std::vector<DominoWindow> windows(nb - 1);
  SlidingResult res;
  std::size_t attempt = 0;
  sampler::for_each_attempt(m, vcfg, probe, m.now(), cfg.duration, seed, &cursor,
                            [&](Tick, const Line& line, sampler::Truth) {
                              const std::size_t c = attempt++ % channels;
                              ++res.samples;
                              if (c < nb) {
                                per_byte[c].add(line[c]);
                                return;
                              }
                              const std::size_t pair = (c - nb) / 7;
                              const unsigned k = static_cast<unsigned>((c - nb) % 7) + 1;
                              windows[pair][k - 1].add(domino(line[pair], line[pair + 1], k));
                            });

  auto filtered = sliding_window_filter(per_byte, windows, cfg.filter);
  res.removed = filtered.removed;
  res.filter_warning = filtered.warning;
  res.per_byte = std::move(filtered.distributions);
  std::vector<ByteDistribution> k4(nb - 1);
  for (std::size_t i = 0; i + 1 < nb; ++i) k4[i] = windows[i][3];
  res.candidates = combine_key(res.per_byte, k4, cfg.top_n, {4, cfg.smoothing});
  res.key = res.candidates.front().bytes;
  if (!truth.empty()) {
    res.truth_rank = rank_of(res.candidates, truth);
    if (res.truth_rank > 0) res.entropy_bits = std::log2(static_cast<double>(res.truth_rank));
  }
  return res;
}

}  // namespace zl::recover
