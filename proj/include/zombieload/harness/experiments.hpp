#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "zombieload/channel/covert.hpp"
#include "zombieload/harness/config.hpp"
#include "zombieload/harness/fb_size.hpp"
#include "zombieload/harness/report.hpp"
#include "zombieload/harness/victims.hpp"
#include "zombieload/recover/aes.hpp"
#include "zombieload/recover/keywords.hpp"
#include "zombieload/recover/targeted.hpp"
#include "zombieload/recover/url.hpp"
#include "zombieload/sampler/sampler.hpp"

// Experiment runners behind the CLI. Every runner is a pure function of the
// scenario and a seed; child seeds are derived with mix_seed so that the
// victim, the attacker and any secrets draw from independent streams.

namespace zl::harness {

using sampler::ByteDistribution;

namespace stream {
inline constexpr std::uint64_t kSecret = 1;
inline constexpr std::uint64_t kVictim = 2;
inline constexpr std::uint64_t kAttacker = 3;
inline constexpr std::uint64_t kLayout = 5;
inline constexpr std::uint64_t kActive = 11;
inline constexpr std::uint64_t kBaseline = 12;
}  // namespace stream

// -------------------------------------------------------------------- victims

struct VictimBuild {
  std::vector<TimedOp> ops;
  std::vector<Byte> truth;  // what the attacker is after, if the victim has a secret
  std::optional<sampler::TriggerSpec> trigger;
  std::vector<Tick> reload_starts;
};

inline AesKey random_key(std::uint64_t seed) {
  Rng rng(seed);
  AesKey k;
  for (auto& b : k) b = static_cast<Byte>(rng());
  return k;
}

inline Byte random_printable(std::uint64_t seed) {
  Rng rng(seed);
  return static_cast<Byte>(0x21 + uniform_below(rng, 94));
}

inline std::vector<Byte> covert_payload(const CovertParams& c, std::uint64_t seed) {
  if (c.payload_text) return {c.payload_text->begin(), c.payload_text->end()};
  Rng rng(seed);
  std::vector<Byte> p(c.payload_bytes);
  for (auto& b : p) b = static_cast<Byte>(rng());
  return p;
}

inline std::vector<Byte> reload_secret(const TraceParams& t, std::uint64_t seed) {
  if (!t.secret.empty()) return t.secret;
  Rng rng(seed);
  std::vector<Byte> s(16);
  for (auto& b : s) b = static_cast<Byte>(rng());
  return s;
}

inline GadgetVictimConfig gadget_config(const GadgetParams& g, Byte secret, Tick duration, std::uint64_t seed) {
  GadgetVictimConfig c;
  c.secret = secret;
  c.secret_offset = g.secret_offset;
  c.array_len = g.array_len;
  c.step = g.step;
  c.mispredict = g.mispredict;
  c.noise_weight = g.noise_weight;
  c.activity_jitter = g.activity_jitter;
  c.noise_pool = g.noise_pool;
  c.duration = duration;
  c.layout_seed = mix_seed(seed, stream::kLayout);
  c.seed = mix_seed(seed, stream::kActive);
  return c;
}

/// Builds the configured victim on `m`, running for about `duration` ticks
/// where the victim kind has no natural length.
inline VictimBuild build_victim(Machine& m, const ScenarioConfig& cfg, std::uint64_t seed, Tick duration) {
  const auto& v = cfg.victim;
  const std::uint64_t vseed = mix_seed(seed, stream::kVictim);
  VictimBuild b;
  if (v.kind == "aes") {
    AesVictimConfig c;
    c.key = v.aes.key ? *v.aes.key : random_key(mix_seed(seed, stream::kSecret));
    c.loads = v.aes.loads;
    c.period = v.aes.period;
    c.noise_loads = v.aes.noise_loads;
    c.key_line = v.aes.key_line;
    c.seed = vseed;
    auto a = victim_aes(m, c);
    b.ops = std::move(a.ops);
    b.truth.assign(c.key.begin(), c.key.end());
    b.trigger = a.trigger;
  } else if (v.kind == "browse") {
    BrowseVictimConfig c;
    c.site = v.browse.profile;
    c.reloads = v.browse.reloads;
    c.reload_interval = v.browse.reload_interval;
    c.seed = vseed;
    auto w = victim_browse(m, c);
    b.ops = std::move(w.ops);
    b.reload_starts = std::move(w.reload_starts);
    const std::string url = "www." + c.site.host;
    b.truth.assign(url.begin(), url.end());
  } else if (v.kind == "gadget") {
    const Byte secret = v.gadget.secret ? *v.gadget.secret : random_printable(mix_seed(seed, stream::kSecret));
    auto g = victim_gadget(m, gadget_config(v.gadget, secret, duration, seed));
    b.ops = std::move(g.ops);
    b.truth = {secret};
  } else if (v.kind == "covert-sender") {
    channel::SenderConfig sc;
    sc.repeats = v.covert.repeats;
    sc.addresses = v.covert.addresses;
    sc.op_spacing = v.covert.op_spacing;
    sc.prefix = v.covert.prefix;
    b.truth = covert_payload(v.covert, mix_seed(seed, stream::kSecret));
    b.ops = channel::send(b.truth, m, sc);
  } else if (v.kind == "custom-trace") {
    const auto& t = v.trace;
    if (t.pattern == "secret-reload") {
      SecretReloadConfig c;
      c.secret = reload_secret(t, mix_seed(seed, stream::kSecret));
      c.interval = t.interval;
      c.noise_lines = t.noise_lines;
      c.duration = duration;
      c.seed = vseed;
      auto r = victim_secret_reload(m, c);
      b.ops = std::move(r.ops);
      b.truth = c.secret;
    } else {
      for (const auto& p : t.pages) {
        uarch::PteFlags f;
        f.user_accessible = p.user;
        f.accessed = p.accessed;
        map_if_absent(m, p.asid, VirtAddr{p.vaddr}, PhysAddr{p.frame}, f);
      }
      for (const auto& o : t.ops) {
        const VirtAddr va{o.vaddr};
        const auto* pte = m.find_pte(o.asid, va);
        const auto priv = pte && !pte->flags.user_accessible ? uarch::Privilege::Supervisor : uarch::Privilege::User;
        Line line;
        line.fill(o.value);
        Op op;
        switch (o.op) {
          case uarch::OpKind::Read: op = Op::read(o.asid, va, priv); break;
          case uarch::OpKind::Write: op = Op::write(o.asid, va, o.value, priv); break;
          case uarch::OpKind::WriteLine: op = Op::write_line(o.asid, va, line, priv); break;
          case uarch::OpKind::Flush: op = Op::flush(o.asid, va); break;
          case uarch::OpKind::Zombie:
            op = Op::zombie(o.asid, va,
                            priv == uarch::Privilege::Supervisor ? uarch::ZombieMode::V1KernelAlias
                                                                 : uarch::ZombieMode::V2ClearedAccessed);
            break;
          case uarch::OpKind::SpecLoad: op = Op::spec_load(o.asid, va); break;
          case uarch::OpKind::StoreNt: op = Op::store_nt(o.asid, va, line); break;
          case uarch::OpKind::Fetch: op = Op::fetch(o.asid, va); break;
          case uarch::OpKind::Idle: op = Op::idle(); break;
        }
        b.ops.push_back({o.at, o.core ? CoreId::c1 : CoreId::c0, op});
      }
      sort_ops(b.ops);
    }
  }
  return b;
}

inline void require_kind(const ScenarioConfig& cfg, std::initializer_list<const char*> kinds, const char* experiment) {
  std::string names;
  for (const char* k : kinds) {
    if (cfg.victim.kind == k) return;
    names += names.empty() ? std::string(k) : std::string(" or ") + k;
  }
  throw Error(ErrorCode::ConfigError, std::string("at /victim/kind: ") + experiment + " needs victim " +
                                          names + ", got '" + cfg.victim.kind + "'");
}

inline std::string hex_string(std::span<const Byte> b) { return detail::hex_string(b); }

template <class Write>
std::string to_text(Write&& w) {
  std::ostringstream os;
  w(os);
  return os.str();
}

// ----------------------------------------------------------------- mitigation

/// Fills the fill buffer with `warmup_loads` distinct lines, then applies the
/// mitigation; one fresh machine (and replacement seed) per trial.
inline std::vector<double> mitigation_residuals(const uarch::MachineConfig& mc, const MitigationSpec& spec,
                                                std::uint64_t seed) {
  std::vector<double> out;
  out.reserve(spec.trials);
  const VirtAddr base{0x0C00'0000ULL};
  const PhysAddr frame{0x0C00'0000ULL};
  for (std::size_t i = 0; i < spec.trials; ++i) {
    auto c = mc;
    c.replacement_seed = mix_seed(seed, i);
    Machine m(c);
    const std::size_t stuffing = spec.stuffing_loads ? *spec.stuffing_loads : m.fill_buffer().capacity();
    for (std::size_t p = 0; p * 63 < spec.warmup_loads; ++p) m.map_page(1, base + p * kPageSize, frame + p * kPageSize, {});
    for (std::size_t j = 0; j < spec.warmup_loads; ++j) {
      m.load(CoreId::c0, 1, base + (j / 63) * kPageSize + (j % 63) * kLineSize);
      m.tick();
    }
    out.push_back(m.apply_mitigation({spec.flush_l1, stuffing}));
  }
  return out;
}

inline json residual_summary(const std::vector<double>& r, const MitigationSpec& spec, std::size_t capacity) {
  double sum = 0, lo = 1, hi = 0;
  std::size_t nonzero = 0;
  for (double x : r) {
    sum += x;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    nonzero += x > 0;
  }
  const double n = r.empty() ? 1.0 : static_cast<double>(r.size());
  return {{"trials", r.size()},
          {"flush_l1", spec.flush_l1},
          {"stuffing_loads", spec.stuffing_loads ? *spec.stuffing_loads : capacity},
          {"mean_residual", sum / n},
          {"min_residual", r.empty() ? 0.0 : lo},
          {"max_residual", hi},
          {"fraction_nonzero", static_cast<double>(nonzero) / n}};
}

// -------------------------------------------------------------------- sim run

inline ExperimentOutput sim_run(const ScenarioConfig& cfg, std::uint64_t seed) {
  ExperimentOutput out;
  Machine m(cfg.machine);
  const auto vcfg = cfg.variant.to_config();
  const Tick duration = seconds_to_ticks(cfg.attacker.duration_s);
  const auto victim = build_victim(m, cfg, seed, duration);
  const auto probe = sampler::prepare_attacker(m, vcfg.variant);
  const auto& idx = cfg.attacker.byte_indices;

  uarch::Trace trace;
  std::size_t next = 0;
  auto advance = [&](Tick t) {
    while (next < victim.ops.size() && victim.ops[next].at <= t) {
      const auto& op = victim.ops[next++];
      m.advance_to(op.at);
      const auto r = uarch::execute(m, op.core, op.op);
      if (!cfg.attacker.trace) continue;
      uarch::TraceRecord rec{op.at, op.core, op.op.kind, op.op.vaddr, {}, r.fb_slot, r.value, r.events};
      if (!(r.events & (uarch::event::kPageFault | uarch::event::kPermissionFault)) &&
          op.op.kind != uarch::OpKind::Idle && op.op.kind != uarch::OpKind::Fetch)
        rec.paddr = r.paddr;
      trace.push_back(rec);
    }
  };

  std::vector<sampler::ZombieSample> samples;
  std::size_t attempts = 0, victim_attempts = 0;
  sampler::run_attempts(m, vcfg, probe, 0, duration, mix_seed(seed, stream::kAttacker), advance,
                        [&](Tick t, const Line& line, sampler::Truth truth) {
                          ++attempts;
                          victim_attempts += truth == sampler::Truth::Victim;
                          auto emit = [&](Byte i) { samples.push_back({t, i, line[i & 0x3F], truth}); };
                          if (cfg.attacker.all_indices_per_attempt) {
                            for (Byte i : idx) emit(i);
                          } else {
                            emit(idx[(attempts - 1) % idx.size()]);
                          }
                          if (cfg.attacker.trace)
                            trace.push_back({t, probe.core, uarch::OpKind::Zombie, probe.at(idx[0]), std::nullopt,
                                             std::nullopt, line[idx[0] & 0x3F], uarch::event::kLeak});
                        });
  if (duration > 0) advance(duration - 1);

  const double secs = ticks_to_seconds(duration);
  out.metrics = {{"victim", cfg.victim.kind},
                 {"variant", cfg.variant.name},
                 {"duration_s", secs},
                 {"victim_ops", victim.ops.size()},
                 {"attempts", attempts},
                 {"samples", samples.size()},
                 {"victim_attempts", victim_attempts},
                 {"tp_measured", attempts ? static_cast<double>(victim_attempts) / static_cast<double>(attempts) : 0.0},
                 {"rate_kbps_measured", secs > 0 ? static_cast<double>(attempts) / secs / 1000.0 : 0.0},
                 {"fb_allocations", m.fb_allocations()},
                 {"assist_events", m.assist_events()}};
  out.files.emplace_back("samples.csv", to_text([&](std::ostream& os) { sampler::write_samples_csv(os, samples); }));
  out.files.emplace_back("samples_truth.csv",
                         to_text([&](std::ostream& os) { sampler::write_samples_debug_csv(os, samples); }));
  if (cfg.attacker.trace)
    out.files.emplace_back("trace.csv", to_text([&](std::ostream& os) { uarch::write_trace_csv(os, trace); }));
  if (cfg.mitigation) {
    const auto r = mitigation_residuals(cfg.machine, *cfg.mitigation, seed);
    out.metrics["mitigation"] = residual_summary(r, *cfg.mitigation, cfg.machine.capacity());
  }
  return out;
}

// ---------------------------------------------------------------- covert bench

inline ExperimentOutput covert_bench(const ScenarioConfig& cfg, std::uint64_t seed) {
  require_kind(cfg, {"covert-sender"}, "covert bench");
  const auto& c = cfg.victim.covert;
  const auto payload = covert_payload(c, mix_seed(seed, stream::kSecret));
  channel::LoopbackConfig lc;
  lc.sender.repeats = c.repeats;
  lc.sender.addresses = c.addresses;
  lc.sender.op_spacing = c.op_spacing;
  lc.sender.prefix = c.prefix;
  lc.window = cfg.attacker.window;
  lc.ack_latency = cfg.attacker.ack_latency;
  lc.max_seconds = cfg.attacker.max_seconds;
  Machine m(cfg.machine);
  const auto r = channel::run_loopback(m, cfg.variant.to_config(), payload, lc, mix_seed(seed, stream::kAttacker));
  ExperimentOutput out;
  out.metrics = {{"payload_bytes", payload.size()},
                 {"simulated_seconds", r.simulated_seconds},
                 {"kbit_per_s", r.kbit_per_s},
                 {"packets_ok", r.stats.packets_ok},
                 {"packets_rejected", r.stats.packets_rejected},
                 {"prefix_mismatch", r.stats.prefix_mismatch},
                 {"duplicates", r.stats.duplicates},
                 {"payload_errors", r.payload_errors},
                 {"slots_sent", r.slots_sent},
                 {"complete", r.complete}};
  if (!r.complete) out.failure = "payload incomplete after " + std::to_string(lc.max_seconds) + " simulated seconds";
  return out;
}

// ----------------------------------------------------------------- recover aes

inline void add_distributions(ExperimentOutput& out, const std::vector<ByteDistribution>& per_byte,
                              const std::vector<ByteDistribution>& per_domino) {
  auto emit = [&](const std::string& name, const ByteDistribution& d) {
    out.files.emplace_back(name, to_text([&](std::ostream& os) { sampler::write_distribution_csv(os, d); }));
  };
  for (std::size_t i = 0; i < per_byte.size(); ++i) emit("dist_" + std::to_string(i) + ".csv", per_byte[i]);
  for (std::size_t i = 0; i < per_domino.size(); ++i) emit("dist_domino_" + std::to_string(i) + ".csv", per_domino[i]);
}

inline ExperimentOutput recover_aes_experiment(const ScenarioConfig& cfg, std::uint64_t seed) {
  require_kind(cfg, {"aes", "custom-trace"}, "recover aes");
  if (cfg.victim.kind == "custom-trace" && cfg.victim.trace.pattern != "secret-reload")
    throw Error(ErrorCode::ConfigError, "at /victim/pattern: recover aes needs the secret-reload pattern");
  ExperimentOutput out;
  Machine m(cfg.machine);
  const auto vcfg = cfg.variant.to_config();
  const auto& a = cfg.attacker;
  const Tick duration = seconds_to_ticks(a.duration_s);
  const auto victim = build_victim(m, cfg, seed, duration);
  out.metrics["truth_hex"] = hex_string(victim.truth);
  try {
    std::vector<Byte> key;
    std::size_t rank = 0;
    std::optional<double> entropy;
    if (cfg.victim.kind == "aes") {
      recover::AesAttackConfig ac;
      ac.budget_loads = a.budget;
      ac.key_bytes = victim.truth.size();
      ac.top_n = a.top_n;
      ac.k = a.k;
      ac.trigger_window = a.trigger_window;
      ac.probe_interval = a.probe_interval;
      const auto r = recover::recover_aes(m, vcfg, victim.ops, *victim.trigger, ac, mix_seed(seed, stream::kAttacker),
                                          victim.truth);
      key = r.key;
      rank = r.truth_rank;
      entropy = r.entropy_bits;
      out.metrics["loads_used"] = r.loads_used;
      out.metrics["samples_used"] = r.samples_used;
      add_distributions(out, r.per_byte, r.per_domino);
    } else {
      recover::SlidingAttackConfig sc;
      sc.key_bytes = victim.truth.size();
      sc.top_n = a.top_n;
      sc.duration = duration;
      const auto r = recover::recover_sliding(m, vcfg, victim.ops, sc, mix_seed(seed, stream::kAttacker), victim.truth);
      key = r.key;
      rank = r.truth_rank;
      entropy = r.entropy_bits;
      out.metrics["samples_used"] = r.samples;
      out.metrics["filtered_values"] = r.removed;
      add_distributions(out, r.per_byte, {});
    }
    out.metrics["key_hex"] = hex_string(key);
    out.metrics["truth_rank"] = rank;
    out.metrics["rank1"] = rank == 1;
    out.metrics["entropy_bits"] = entropy ? json(*entropy) : json(nullptr);
    if (rank == 0) out.failure = "true key not among the top " + std::to_string(a.top_n) + " candidates";
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientData) throw;
    out.metrics["error"] = e.what();
    out.failure = e.what();
  }
  return out;
}

// ----------------------------------------------------------------- recover url

inline ExperimentOutput recover_url_experiment(const ScenarioConfig& cfg, std::uint64_t seed) {
  require_kind(cfg, {"browse"}, "recover url");
  const auto vcfg = cfg.variant.to_config();
  const auto& a = cfg.attacker;
  if (!a.keywords.empty()) recover::check_keywords(a.keywords);
  ExperimentOutput out;
  Machine m(cfg.machine);
  const auto victim = build_victim(m, cfg, seed, 0);
  const std::string expected(victim.truth.begin(), victim.truth.end());
  recover::UrlAttackConfig uc;
  uc.max_reloads = a.max_reloads;
  uc.tlds = a.tlds;
  const auto r = recover::recover_url(m, vcfg, victim.ops, victim.reload_starts, uc, mix_seed(seed, stream::kAttacker));
  out.metrics = {{"site", cfg.victim.browse.site},
                 {"expected_url", expected},
                 {"url", r.url ? json(*r.url) : json(nullptr)},
                 {"correct", r.url == expected},
                 {"reloads_used", r.reloads_used},
                 {"attempts", r.attempts},
                 {"candidates", r.candidates.size()}};
  if (!r.url) out.failure = "no complete URL within " + std::to_string(a.max_reloads) + " reloads";

  if (!a.keywords.empty()) {
    Machine km(cfg.machine);
    const auto kv = build_victim(km, cfg, seed, 0);
    const auto probe = sampler::prepare_attacker(km, vcfg.variant);
    uarch::OpCursor cursor(kv.ops);
    const Tick end = kv.ops.empty() ? 0 : kv.ops.back().at + 1;
    const auto lines = sampler::sample_lines(km, vcfg, probe, 0, end, mix_seed(seed, stream::kAttacker + 100), &cursor);
    const auto matches = recover::match_keywords(lines, a.keywords);
    json kw = json::array();
    for (std::size_t id = 0; id < a.keywords.size(); ++id) {
      std::size_t n = 0;
      std::optional<Tick> first;
      for (const auto& mt : matches)
        if (mt.id == id) {
          ++n;
          if (!first) first = mt.timestamp;
        }
      kw.push_back({{"keyword", a.keywords[id]}, {"matches", n}, {"first_tick", first ? json(*first) : json(nullptr)}});
    }
    out.metrics["keywords"] = kw;
  }
  return out;
}

// ------------------------------------------------------------ recover targeted

struct TargetedTrial {
  Byte secret = 0;
  std::optional<recover::TargetedResult> result;  // nullopt on NoSignal
};

/// One active/baseline pair against the prefetch gadget. The secret byte is
/// read back from the byte offset of the secret line that the gadget leaks.
inline TargetedTrial run_targeted(const uarch::MachineConfig& mc, const sampler::VariantConfig& vcfg,
                                  const GadgetParams& g, Byte secret, double probe_seconds,
                                  const recover::TargetedOptions& opt, std::uint64_t seed) {
  const Tick duration = seconds_to_ticks(probe_seconds);
  const auto base = gadget_config(g, secret, duration, seed);
  Machine scratch(mc);
  auto dry = base;
  dry.duration = 0;
  const auto secret_addr = victim_gadget(scratch, dry).secret_addr + g.secret_offset;
  auto build = [&](Machine& m, bool active) {
    auto c = base;
    if (!active) c.mispredict = 0;
    c.seed = mix_seed(seed, active ? stream::kActive : stream::kBaseline);
    return victim_gadget(m, c).ops;
  };
  TargetedTrial t{secret, std::nullopt};
  try {
    t.result = recover::targeted_leak(mc, vcfg, build, secret_addr, probe_seconds, opt, mix_seed(seed, stream::kAttacker));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoSignal) throw;
  }
  return t;
}

inline ExperimentOutput recover_targeted_experiment(const ScenarioConfig& cfg, std::uint64_t seed) {
  require_kind(cfg, {"gadget"}, "recover targeted");
  const auto& g = cfg.victim.gadget;
  const auto& a = cfg.attacker;
  const Byte secret = g.secret ? *g.secret : random_printable(mix_seed(seed, stream::kSecret));
  recover::TargetedOptions opt;
  opt.mode = a.mode;
  opt.z = a.z;
  opt.drift = a.drift;
  const auto t = run_targeted(cfg.machine, cfg.variant.to_config(), g, secret, a.probe_seconds, opt, seed);
  ExperimentOutput out;
  out.metrics = {{"secret", secret},
                 {"mode", a.mode == recover::LeakMode::Raw ? "raw" : "ascii7"},
                 {"probe_seconds", a.probe_seconds},
                 {"no_signal", !t.result},
                 {"correct", t.result && t.result->value == secret}};
  if (t.result) {
    const auto& f = t.result->freq;
    out.metrics["value"] = t.result->value;
    out.metrics["confidence"] = t.result->confidence;
    out.metrics["active_total"] = f.active.total();
    out.metrics["baseline_total"] = f.baseline.total();
    out.metrics["delta_at_secret"] = f.delta[secret];
    out.files.emplace_back("delta.csv", to_text([&](std::ostream& os) {
                             os << "value,active,baseline,delta\n";
                             for (unsigned v = 0; v < 256; ++v)
                               os << v << ',' << f.active.counts[v] << ',' << f.baseline.counts[v] << ','
                                  << f.delta[v] << '\n';
                           }));
  } else {
    out.metrics["value"] = nullptr;
    out.failure = "no-signal: no value stands out from run-to-run variation";
  }
  return out;
}

// --------------------------------------------------------------------- fb-size

inline ExperimentOutput fb_size_experiment(const ScenarioConfig& cfg, std::uint64_t seed) {
  const auto curve = run_fb_size(cfg.machine, cfg.fb_size, seed);
  ExperimentOutput out;
  out.metrics = {{"uarch", cfg.machine.uarch == uarch::Uarch::Skylake ? "skylake" : "pre-skylake"},
                 {"capacity", cfg.machine.capacity()},
                 {"dual_core", cfg.fb_size.dual_core},
                 {"repeats", cfg.fb_size.repeats},
                 {"knee", curve.knee ? json(*curve.knee) : json(nullptr)},
                 {"latency", curve.latency}};
  out.files.emplace_back("curve.csv", to_text([&](std::ostream& os) {
                           os << "n,latency\n";
                           for (std::size_t i = 0; i < curve.latency.size(); ++i)
                             os << i + 1 << ',' << curve.latency[i] << '\n';
                         }));
  if (!curve.knee) out.failure = "no knee within n = 1.." + std::to_string(cfg.fb_size.n_max);
  return out;
}

// ------------------------------------------------------------------- calibrate

/// Share of attempts that return victim data while a victim keeps the fill
/// buffer busy, for a given background weight (1 - true-positive rate).
inline double measure_tp(const uarch::MachineConfig& mc, sampler::VariantConfig v, double background_weight,
                         std::size_t attempts, std::uint64_t seed) {
  constexpr double kRate = 100'000;  // attempts per second; TP does not depend on it
  constexpr Tick kWarmup = 100;
  v.true_positive_rate = 1.0 - background_weight;
  v.bytes_per_second = kRate;
  const Tick duration = static_cast<Tick>(std::ceil(static_cast<double>(attempts) * kTicksPerSecond / kRate));
  Machine m(mc);
  SecretReloadConfig sc;
  sc.secret.assign(16, 0x5A);
  sc.duration = kWarmup + duration + 1;
  sc.seed = mix_seed(seed, stream::kVictim);
  const auto victim = victim_secret_reload(m, sc);
  const auto probe = sampler::prepare_attacker(m, v.variant);
  uarch::OpCursor cursor(victim.ops);
  std::size_t total = 0, hits = 0;
  sampler::for_each_attempt(m, v, probe, kWarmup, duration, mix_seed(seed, stream::kAttacker), &cursor,
                            [&](Tick, const Line&, sampler::Truth t) {
                              ++total;
                              hits += t == sampler::Truth::Victim;
                            });
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

/// Attempts per second over `seconds` of simulated time, in KB/s.
inline double measure_rate_kbps(const uarch::MachineConfig& mc, const sampler::VariantConfig& v, double seconds,
                                std::uint64_t seed) {
  Machine m(mc);
  const auto probe = sampler::prepare_attacker(m, v.variant);
  std::size_t n = 0;
  sampler::for_each_attempt(m, v, probe, 0, seconds_to_ticks(seconds), seed, nullptr,
                            [&](Tick, const Line&, sampler::Truth) { ++n; });
  return static_cast<double>(n) / seconds / 1000.0;
}

inline constexpr double kTpTolerance = 0.02;

inline ExperimentOutput calibrate_experiment(const ScenarioConfig& cfg, std::uint64_t seed) {
  const auto& c = cfg.calibration;
  ExperimentOutput out;
  json presets = json::object();
  std::vector<std::string> infeasible;
  const std::size_t steps = static_cast<std::size_t>(std::llround(1.0 / c.tp_grid_step));
  for (std::size_t pi = 0; pi < c.presets.size(); ++pi) {
    const auto& name = c.presets[pi];
    const auto v = sampler::preset(name);
    const double target = c.tp_target ? *c.tp_target : v.true_positive_rate;
    const std::uint64_t s = mix_seed(seed, 100 + pi);
    double best_w = 0, best_tp = 0, best_err = 2;
    for (std::size_t i = 0; i <= steps; ++i) {
      const double w = std::min(1.0, static_cast<double>(i) * c.tp_grid_step);
      const double tp = measure_tp(cfg.machine, v, w, c.attempts, s);
      const double err = std::abs(tp - target);
      if (err < best_err) best_w = w, best_tp = tp, best_err = err;
    }
    const double rate = measure_rate_kbps(cfg.machine, v, 10.0, mix_seed(s, 7));
    presets[name] = {{"target_tp", target},
                     {"background_weight", best_w},
                     {"measured_tp", best_tp},
                     {"rate_kbps", v.bytes_per_second / 1000.0},
                     {"measured_rate_kbps", rate},
                     {"feasible", best_err <= kTpTolerance}};
    if (best_err > kTpTolerance) infeasible.push_back(name);
  }

  json gadget = json::object();
  if (!c.gadget_grid.empty() && c.gadget_trials > 0) {
    const auto v = sampler::preset("v1-tsx");
    json grid = json::array();
    double best_w = c.gadget_grid.front(), best_acc = -1, best_err = 2;
    for (std::size_t gi = 0; gi < c.gadget_grid.size(); ++gi) {
      GadgetParams g = cfg.victim.gadget;
      g.noise_weight = c.gadget_grid[gi];
      std::size_t ok = 0;
      for (std::size_t t = 0; t < c.gadget_trials; ++t) {
        const std::uint64_t ts = mix_seed(mix_seed(seed, 200), t);
        const Byte secret = random_printable(mix_seed(ts, stream::kSecret));
        recover::TargetedOptions opt;
        opt.z = cfg.attacker.z;
        opt.drift = cfg.attacker.drift;
        const auto r = run_targeted(cfg.machine, v, g, secret, c.gadget_probe_seconds, opt, ts);
        ok += r.result && r.result->value == secret;
      }
      const double acc = static_cast<double>(ok) / static_cast<double>(c.gadget_trials);
      grid.push_back({{"noise_weight", g.noise_weight}, {"accuracy", acc}});
      const double err = std::abs(acc - c.gadget_target);
      if (err < best_err) best_w = g.noise_weight, best_acc = acc, best_err = err;
    }
    gadget = {{"target_accuracy", c.gadget_target},
              {"probe_seconds", c.gadget_probe_seconds},
              {"trials", c.gadget_trials},
              {"noise_weight", best_w},
              {"measured_accuracy", best_acc},
              {"grid", grid}};
  }

  out.metrics = {{"presets", presets},
                 {"gadget", gadget},
                 {"constants",
                  {{"sender_repeats", calib::kSenderRepeats},
                   {"sender_addresses", calib::kSenderAddresses},
                   {"sender_op_spacing", calib::kSenderOpSpacing},
                   {"ack_latency", calib::kAckLatency},
                   {"trigger_window", calib::kTriggerWindow},
                   {"probe_interval", calib::kProbeInterval},
                   {"gadget_mispredict", calib::kGadgetMispredict},
                   {"gadget_activity_jitter", calib::kGadgetActivityJitter},
                   {"gadget_noise_pool", calib::kGadgetNoisePool},
                   {"gadget_step", calib::kGadgetStep},
                   {"targeted_z", calib::kTargetedZ},
                   {"targeted_drift", calib::kTargetedDrift}}}};
  out.files.emplace_back("calibration.json", out.metrics.dump(2) + "\n");
  if (!infeasible.empty()) {
    std::string names;
    for (const auto& n : infeasible) names += (names.empty() ? "" : ", ") + n;
    out.failure = "no feasible background weight within 2 pp for: " + names;
  }
  return out;
}

// ---------------------------------------------------------------------- trials

using Runner = std::function<ExperimentOutput(const ScenarioConfig&, std::uint64_t)>;

/// Mean of every numeric metric and the share of true booleans across trials.
inline json summarize(const std::vector<ExperimentOutput>& trials) {
  json s = json::object();
  if (trials.empty()) return s;
  for (auto it = trials[0].metrics.begin(); it != trials[0].metrics.end(); ++it) {
    const auto& key = it.key();
    bool all_num = true, all_bool = true;
    double sum = 0;
    for (const auto& t : trials) {
      const auto f = t.metrics.find(key);
      if (f == t.metrics.end()) {
        all_num = all_bool = false;
        break;
      }
      all_num = all_num && f->is_number();
      all_bool = all_bool && f->is_boolean();
      if (f->is_number()) sum += f->get<double>();
      if (f->is_boolean()) sum += f->get<bool>() ? 1 : 0;
    }
    if (all_num) s[key] = {{"mean", sum / static_cast<double>(trials.size())}};
    if (all_bool) s[key] = {{"fraction_true", sum / static_cast<double>(trials.size())}};
  }
  std::size_t failures = 0;
  for (const auto& t : trials) failures += t.failure.has_value();
  s["failures"] = failures;
  return s;
}

/// Runs cfg.trials independent trials with seeds mix_seed(seed, i) on worker
/// threads, one Machine per trial, and merges the results in trial order.
inline ExperimentOutput run_trials(const ScenarioConfig& cfg, const Runner& runner) {
  if (cfg.trials <= 1) return runner(cfg, cfg.seed);
  const std::size_t n = cfg.trials;
  std::vector<ExperimentOutput> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        results[i] = runner(cfg, mix_seed(cfg.seed, i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, n);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  ExperimentOutput out;
  json per = json::array();
  std::size_t failures = 0;
  for (std::size_t i = 0; i < n; ++i) {
    json t = results[i].metrics;
    t["trial_seed"] = mix_seed(cfg.seed, i);
    if (results[i].failure) {
      t["failure"] = *results[i].failure;
      ++failures;
    }
    per.push_back(t);
    for (auto& [name, content] : results[i].files) out.files.emplace_back("trial" + std::to_string(i) + "_" + name, content);
  }
  out.metrics = {{"trials", n}, {"summary", summarize(results)}, {"per_trial", per}};
  if (failures == n) out.failure = "all " + std::to_string(n) + " trials failed";
  return out;
}

inline const std::vector<std::pair<std::string, Runner>>& experiments() {
  static const std::vector<std::pair<std::string, Runner>> table{
      {"sim run", sim_run},
      {"covert bench", covert_bench},
      {"recover aes", recover_aes_experiment},
      {"recover url", recover_url_experiment},
      {"recover targeted", recover_targeted_experiment},
      {"fb-size", fb_size_experiment},
      {"calibrate", calibrate_experiment},
  };
  return table;
}

inline ExperimentOutput run_experiment(const std::string& name, const ScenarioConfig& cfg) {
  for (const auto& [n, runner] : experiments())
    if (n == name) return run_trials(cfg, runner);
  throw Error(ErrorCode::ParameterError, "unknown experiment '" + name + "'");
}

}  // namespace zl::harness
