// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "zombieload/zombieload.hpp"

using namespace zl;
using namespace zl::harness;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work = "acceptance_work";

ScenarioConfig scenario(const std::string& name) {
  return load_config(std::string(ZL_SCENARIO_DIR) + "/" + name + ".json");
}

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------
Outcome checksum_exhaustive() {
  std::size_t accepted = 0, wrong = 0, touched_on_reject = 0;
  for (unsigned d = 0; d < 256; ++d)
    for (unsigned c = 0; c < 256; ++c) {
      const channel::Packet p{static_cast<Byte>(d), static_cast<Byte>(c), 0, channel::kDefaultPrefix};
      channel::OracleArray oracle;
      oracle.touch(channel::transient_verify(p));
      const bool valid = (d + c) % 256 == 0;
      const auto hit = oracle.scan();
      if (valid) {
        ++accepted;
        wrong += hit != std::vector<Byte>{static_cast<Byte>(d)};
      } else {
        touched_on_reject += hit.size();
        wrong += !hit.empty();
      }
    }
  return {accepted == 256 && wrong == 0 && touched_on_reject == 0,
          fmt("accepted %zu of 65536, %zu oracle pages cached by rejected packets", accepted, touched_on_reject)};
}

// 2 -------------------------------------------------------------------------
Outcome covert_loopback() {
  const auto cfg = scenario("covert_bench");
  const auto out = run_experiment("covert bench", cfg);
  const auto& m = out.metrics;
  const double kbit = m["kbit_per_s"].get<double>();
  const bool ok = cfg.variant.name == "v1-tsx" && m["payload_bytes"] == 10240 && m["payload_errors"] == 0 &&
                  m["complete"].get<bool>() && kbit >= 26.8 / 4 && kbit <= 26.8 * 4;
  return {ok, fmt("10240 bytes, %d payload errors, %.2f kbit/s over %.2f simulated s",
                  m["payload_errors"].get<int>(), kbit, m["simulated_seconds"].get<double>())};
}

// 3 -------------------------------------------------------------------------
Outcome aes_recovery() {
  auto cfg = scenario("aes_v1_tsx");
  cfg.trials = 20;
  cfg.attacker.budget = 10'000;
  auto count_rank1 = [](const ExperimentOutput& out) {
    std::size_t n = 0;
    for (const auto& t : out.metrics["per_trial"]) n += t.value("truth_rank", 0) == 1;
    return n;
  };
  const auto noisy = count_rank1(run_experiment("recover aes", cfg));
  cfg.variant = variant_from_preset("noise-free");
  cfg.variant.rate_kbps = 5.30;
  const auto clean = count_rank1(run_experiment("recover aes", cfg));
  return {noisy >= 18 && clean == 20, fmt("rank 1 in %zu/20 (v1-tsx) and %zu/20 (noise-free), budget 10000 loads",
                                          noisy, clean)};
}

// 4 -------------------------------------------------------------------------
Outcome combine_oracle() {
  constexpr std::size_t kTop = 16;
  std::size_t equal = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    Rng rng(mix_seed(2019, t));
    auto dist = [&] {
      sampler::ByteDistribution d;
      for (auto& c : d.counts) c = uniform_below(rng, 1000);
      return d;
    };
    const std::vector<sampler::ByteDistribution> pb{dist(), dist()}, pd{dist()};
    const auto dp = recover::combine_key(pb, pd, kTop);
    std::vector<std::pair<double, std::array<Byte, 2>>> all;
    all.reserve(65536);
    for (unsigned a = 0; a < 256; ++a)
      for (unsigned b = 0; b < 256; ++b) {
        const std::array<Byte, 2> k{static_cast<Byte>(a), static_cast<Byte>(b)};
        all.push_back({recover::score_key(pb, pd, k), k});
      }
    std::partial_sort(all.begin(), all.begin() + kTop, all.end(),
                      [](auto& x, auto& y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
    bool same = dp.size() == kTop;
    for (std::size_t r = 0; same && r < kTop; ++r) {
      const bool key_eq = std::equal(dp[r].bytes.begin(), dp[r].bytes.end(), all[r].second.begin());
      // Keys may only differ where two scores tie up to rounding.
      same = std::abs(dp[r].score - all[r].first) < 1e-9 && (key_eq || std::abs(all[r].first - dp[r].score) < 1e-12);
    }
    equal += same;
  }
  return {equal == 100, fmt("top-16 lists equal for %zu/100 random distribution triples", equal)};
}

// 5 -------------------------------------------------------------------------
Outcome fb_knee() {
  uarch::MachineConfig sky, pre;
  pre.uarch = uarch::Uarch::PreSkylake;
  FbSizeSpec spec, dual;
  dual.dual_core = true;
  const auto a = run_fb_size(sky, spec, 1).knee.value_or(0);
  const auto b = run_fb_size(pre, spec, 1).knee.value_or(0);
  const auto c = run_fb_size(sky, dual, 1).knee.value_or(0);
  return {a == 12 && b == 10 && c == 12, fmt("knee %zu (skylake), %zu (pre-skylake), %zu (dual-core)", a, b, c)};
}

// 6 -------------------------------------------------------------------------
Outcome byte_index() {
  std::size_t ok = 0;
  for (auto variant : {sampler::Variant::V1, sampler::Variant::V2}) {
    uarch::Machine m;
    m.map_page(1, uarch::VirtAddr{0x1000}, uarch::PhysAddr{0x9000}, {});
    Line planted;
    for (std::size_t i = 0; i < kLineSize; ++i) planted[i] = static_cast<Byte>(0xA0 ^ (i * 37));
    m.poke_line(uarch::PhysAddr{0x9000 + 7 * kLineSize}, planted);
    m.load(uarch::CoreId::c0, 1, uarch::VirtAddr{0x1000 + 7 * kLineSize});
    const auto probe = sampler::prepare_attacker(m, variant);
    for (unsigned i = 0; i < 64; ++i) ok += m.zombie_load(probe.core, probe.asid, probe.at(i), probe.mode).value == planted[i];
  }
  return {ok == 128, fmt("%zu/128 indices returned the planted byte (V1 and V2 probes)", ok)};
}

// 7 -------------------------------------------------------------------------
Outcome sampler_calibration() {
  bool all = true;
  std::string detail;
  for (const auto& p : sampler::kPresets) {
    const auto v = sampler::preset(p.name);
    uarch::Machine m;
    m.map_page(1, uarch::VirtAddr{0x1000}, uarch::PhysAddr{0x9000}, {});
    const auto probe = sampler::prepare_attacker(m, v.variant);
    const double seconds = std::max(10.0, 1.0e4 / v.bytes_per_second * 1.01);
    std::size_t n = 0, hits = 0;
    sampler::run_attempts(
        m, v, probe, 0, seconds_to_ticks(seconds), mix_seed(7, n),
        [&](Tick) {  // victim keeps its line in the fill buffer
          m.clflush(uarch::CoreId::c0, 1, uarch::VirtAddr{0x1040});
          m.load(uarch::CoreId::c0, 1, uarch::VirtAddr{0x1040});
        },
        [&](Tick, const Line&, sampler::Truth t) {
          ++n;
          hits += t == sampler::Truth::Victim;
        });
    const double rate = static_cast<double>(n) / seconds / 1000.0;
    const double tp = static_cast<double>(hits) / static_cast<double>(n);
    const bool ok = n >= 10'000 && std::abs(rate / p.kilobytes_per_second - 1) <= 0.05 &&
                    std::abs(tp - p.true_positive_rate) <= 0.02;
    all = all && ok;
    detail += fmt("%s%s %.3f KB/s TP %.4f (%zu attempts)", detail.empty() ? "" : "; ", std::string(p.name).c_str(),
                  rate, tp, n);
  }
  return {all, detail};
}

// 8 -------------------------------------------------------------------------
Outcome targeted() {
  std::ifstream in(std::string(ZL_DATA_DIR) + "/calibration.json");
  const auto calib_file = json::parse(in);
  const double noise_weight = calib_file["gadget"]["noise_weight"].get<double>();

  auto cfg = scenario("targeted_raw");
  cfg.victim.gadget.noise_weight = noise_weight;
  cfg.victim.gadget.secret.reset();
  auto accuracy = [&](recover::LeakMode mode, double seconds, std::size_t trials) {
    auto c = cfg;
    c.trials = trials;
    c.attacker.mode = mode;
    c.attacker.probe_seconds = seconds;
    return run_experiment("recover targeted", c).metrics["summary"]["correct"]["fraction_true"].get<double>();
  };
  const double raw10 = accuracy(recover::LeakMode::Raw, 10, 100);
  const double raw20 = accuracy(recover::LeakMode::Raw, 20, 100);
  const double ascii = accuracy(recover::LeakMode::Ascii7, 10, 100);

  std::size_t blind = 0, blind_trials = 0;
  for (Byte secret : {Byte{0x00}, Byte{0xFF}}) {
    auto c = cfg;
    c.victim.gadget.secret = secret;
    c.trials = 20;
    const auto out = run_experiment("recover targeted", c);
    for (const auto& t : out.metrics["per_trial"]) blind += t["no_signal"].get<bool>();
    blind_trials += 20;
  }
  const bool ok = raw10 >= 0.28 && raw20 >= 0.36 && ascii >= 0.62 && blind == blind_trials;
  return {ok, fmt("noise weight %.4f: raw 10 s %.0f%%, raw 20 s %.0f%%, ascii7 %.0f%%, NoSignal for 0x00/0xFF %zu/%zu",
                  noise_weight, 100 * raw10, 100 * raw20, 100 * ascii, blind, blind_trials)};
}

// 9 -------------------------------------------------------------------------
Outcome url_recovery() {
  bool ok = true;
  std::string detail;
  for (const auto& [site, bound] : {std::pair{"nytimes", 4}, std::pair{"facebook", 4}, std::pair{"kernel", 34},
                                    std::pair{"gnupg", 34}}) {
    auto cfg = scenario(std::string("url_") + site);
    cfg.trials = 20;
    cfg.attacker.keywords.clear();
    const auto out = run_experiment("recover url", cfg);
    std::size_t worst = 0, correct = 0;
    for (const auto& t : out.metrics["per_trial"]) {
      worst = std::max<std::size_t>(worst, t["reloads_used"].get<std::size_t>());
      correct += t["correct"].get<bool>();
    }
    ok = ok && correct == 20 && worst <= static_cast<std::size_t>(bound);
    detail += fmt("%s%s %zu/20 correct, max %zu reloads (bound %d)", detail.empty() ? "" : "; ", site, correct,
                  worst, bound);
  }
  return {ok, detail};
}

// 10 ------------------------------------------------------------------------
Outcome mitigation() {
  MitigationSpec spec;  // LoadStuffing(capacity) + FlushL1, 1000 trials
  const auto lru = mitigation_residuals({}, spec, 1);
  uarch::MachineConfig rr;
  rr.replacement = uarch::ReplacementPolicy::RoundRobin;
  const auto round = mitigation_residuals(rr, spec, 1);
  const auto nonzero = std::count_if(lru.begin(), lru.end(), [](double r) { return r > 0; });
  const double rr_max = *std::max_element(round.begin(), round.end());
  return {nonzero >= 950 && rr_max == 0.0,
          fmt("residual > 0 in %ld/1000 trials (pseudo-LRU), max residual %.3f (round-robin)", long(nonzero), rr_max)};
}

// 11 ------------------------------------------------------------------------
Outcome cli_determinism() {
  const std::vector<std::pair<std::string, std::string>> runs{
      {"sim run", "sim_secret_reload"},     {"sim run", "sim_trace_ops"},
      {"covert bench", "covert_text"},      {"recover aes", "aes_noise_free"},
      {"recover aes", "sgx_sliding"},       {"recover url", "url_gnupg"},
      {"recover targeted", "targeted_ascii7"}, {"fb-size", "fb_size_dual_core"},
      {"calibrate", "calibrate_trivial"}};
  std::size_t identical = 0, files = 0;
  std::string bad;
  for (const auto& [cmd, name] : runs) {
    const fs::path a = g_work / name / "a", b = g_work / name / "b";
    fs::remove_all(g_work / name);
    for (const auto& dir : {a, b}) {
      const std::string line = std::string(ZLSIM_PATH) + " " + cmd + " " + ZL_SCENARIO_DIR + "/" + name +
                               ".json --out " + dir.string() + " 2>/dev/null";
      std::system(line.c_str());
    }
    bool same = fs::exists(a / "report.json");
    for (const auto& e : fs::directory_iterator(a)) {
      auto read = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
      };
      const auto other = b / e.path().filename();
      same = same && fs::exists(other) && read(e.path()) == read(other);
      ++files;
    }
    identical += same;
    if (!same) bad += " " + name;
  }
  return {identical == runs.size(),
          fmt("%zu/%zu experiments byte-identical across reruns (%zu files)%s", identical, runs.size(), files,
              bad.empty() ? "" : (", differing:" + bad).c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_work = argv[1];
  fs::create_directories(g_work);
  struct Criterion {
    const char* name;
    double limit_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"checksum exhaustiveness", 1, checksum_exhaustive},
      {"covert-channel loopback", 30, covert_loopback},
      {"AES key recovery", 60, aes_recovery},
      {"domino DP oracle equivalence", 10, combine_oracle},
      {"fill-buffer knee", 5, fb_knee},
      {"byte-index determinism", 1, byte_index},
      {"sampler calibration", 10, sampler_calibration},
      {"targeted leakage", 60, targeted},
      {"URL recovery", 30, url_recovery},
      {"mitigation residual", 5, mitigation},
      {"determinism suite", 0, cli_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit_s == 0 || s < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << c.name << ": " << o.detail
              << fmt(" (%.2f s", s) << (c.limit_s > 0 ? fmt(", limit %.0f s)", c.limit_s) : std::string(")"))
              << (in_time ? "" : " over time limit") << std::endl;
  }
  return failed ? 1 : 0;
}
