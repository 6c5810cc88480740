#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "zombieload/zombieload.hpp"

using namespace zl;
using namespace zl::harness;
namespace fs = std::filesystem;

namespace {

ScenarioConfig parse(const std::string& text) { return parse_config_text(text, "t.json"); }

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    return e.what();
  }
  ADD_FAILURE() << "no error for " << text;
  return {};
}

/// Random but valid scenario; only fields that the victim kind serializes are varied.
ScenarioConfig random_config(Rng& rng) {
  auto pick = [&](std::uint64_t n) { return uniform_below(rng, n); };
  ScenarioConfig c;
  c.seed = rng();
  c.trials = 1 + pick(50);
  c.machine.uarch = pick(2) ? uarch::Uarch::Skylake : uarch::Uarch::PreSkylake;
  if (pick(2)) c.machine.fb_entries = 1 + pick(32);
  c.machine.c_store = 1 + pick(4);
  c.machine.c_stall = 1 + pick(20);
  c.machine.replacement = pick(2) ? uarch::ReplacementPolicy::RoundRobin : uarch::ReplacementPolicy::PseudoLruReuse;
  c.machine.reuse_probability = uniform01(rng);
  c.machine.replacement_seed = rng();
  c.machine.stale_allocated_eligible = pick(2);

  static const char* kPresetNames[] = {"v1-tsx", "v2-signal", "v2-tsx", "noise-free"};
  c.variant = variant_from_preset(kPresetNames[pick(4)]);
  if (pick(2)) {
    c.variant.name = "custom";
    c.variant.rate_kbps = 0.01 + 10 * uniform01(rng);
    c.variant.tp_rate = uniform01(rng);
    c.variant.suppression = pick(2) ? sampler::Suppression::SignalHandler : sampler::Suppression::Speculation;
  }

  static const char* kKinds[] = {"none", "aes", "browse", "gadget", "covert-sender", "custom-trace"};
  auto& v = c.victim;
  v.kind = kKinds[pick(6)];
  if (v.kind == "aes") {
    if (pick(2)) v.aes.key = random_key(rng());
    v.aes.loads = 1 + pick(20000);
    v.aes.period = 8 + pick(5000);
    v.aes.noise_loads = pick(16);
    v.aes.key_line = static_cast<unsigned>(pick(63));
  } else if (v.kind == "browse") {
    static const char* kSites[] = {"nytimes", "facebook", "kernel", "gnupg"};
    v.browse.site = kSites[pick(4)];
    v.browse.profile = site_profile(v.browse.site);
    v.browse.profile.requests_per_reload = 1 + pick(20);
    v.browse.reloads = 1 + pick(100);
    v.browse.reload_interval = pick(50000);
  } else if (v.kind == "gadget") {
    if (pick(2)) v.gadget.secret = static_cast<Byte>(pick(256));
    v.gadget.secret_offset = static_cast<unsigned>(pick(64));
    v.gadget.mispredict = uniform01(rng);
    v.gadget.noise_weight = uniform01(rng);
    v.gadget.step = 4 + pick(400);
  } else if (v.kind == "covert-sender") {
    if (pick(2)) v.covert.payload_text = "hello " + std::to_string(pick(1000));
    v.covert.payload_bytes = 1 + pick(20000);
    v.covert.repeats = 1 + pick(100);
    v.covert.prefix = static_cast<Byte>(pick(256));
  } else if (v.kind == "custom-trace") {
    if (pick(2)) {
      v.trace.pattern = "ops";
      v.trace.pages.push_back({1, 0x1000, 0x7000, true, pick(2) == 1});
      for (std::size_t i = 0, n = 1 + pick(5); i < n; ++i)
        v.trace.ops.push_back({i * 10, static_cast<unsigned>(pick(2)), uarch::OpKind::Read, 1, 0x1000 + pick(4096),
                               static_cast<Byte>(pick(256))});
    } else {
      v.trace.secret.resize(2 + pick(63));
      for (auto& b : v.trace.secret) b = static_cast<Byte>(pick(256));
      v.trace.interval = 20 + pick(100);
    }
  }

  auto& a = c.attacker;
  a.duration_s = 0.001 + uniform01(rng);
  a.budget = 1 + pick(20000);
  a.top_n = 1 + pick(64);
  a.k = 1 + static_cast<unsigned>(pick(7));
  a.mode = pick(2) ? recover::LeakMode::Raw : recover::LeakMode::Ascii7;
  a.z = 10 * uniform01(rng);
  a.keywords = {"GET /"};
  a.byte_indices = {static_cast<Byte>(pick(64)), static_cast<Byte>(pick(64))};
  a.all_indices_per_attempt = pick(2);
  a.trace = pick(2);
  c.fb_size.n_max = 2 + pick(40);
  c.fb_size.dual_core = pick(2);
  if (pick(2)) {
    MitigationSpec m;
    if (pick(2)) m.stuffing_loads = pick(12);
    m.trials = 1 + pick(2000);
    c.mitigation = m;
  }
  if (pick(2)) c.calibration.tp_target = uniform01(rng);
  c.calibration.gadget_grid = {uniform01(rng)};
  return c;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

}  // namespace

// -------------------------------------------------------------------- config

TEST(Config, ShippedScenariosRoundTrip) {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(ZL_SCENARIO_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const auto c = load_config(entry.path().string());
    const auto back = parse(canonical_text(c));
    EXPECT_EQ(back, c) << entry.path();
    EXPECT_EQ(canonical_text(back), canonical_text(c));
    ++n;
  }
  EXPECT_GE(n, 10u);
}

TEST(ConfigProperty, RandomConfigsRoundTrip) {
  for (std::uint64_t seed = 1; seed <= 300; ++seed) {
    Rng rng(seed);
    const auto c = random_config(rng);
    const auto text = canonical_text(c);
    ScenarioConfig back;
    ASSERT_NO_THROW(back = parse(text)) << text;
    EXPECT_EQ(back, c) << "seed " << seed << "\n" << text;
    EXPECT_EQ(scenario_digest(back), scenario_digest(c));
  }
}

TEST(Config, DefaultsFromMinimalFile) {
  const auto c = parse(R"({"seed": 5})");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.trials, 1u);
  EXPECT_EQ(c.machine.capacity(), 12u);
  EXPECT_EQ(c.variant.name, "v1-tsx");
  EXPECT_EQ(c.victim.kind, "none");
  EXPECT_FALSE(c.mitigation);
  EXPECT_EQ(c.victim.gadget.noise_weight, calib::kGadgetNoiseWeight);
}

TEST(Config, AcceptsHexAndPresetObjects) {
  const auto c = parse(R"({"seed": "0x10", "variant": {"preset": "v2-tsx", "rate_kbps": 2},
                           "machine": {"uarch": "pre-skylake"}})");
  EXPECT_EQ(c.seed, 16u);
  EXPECT_EQ(c.variant.variant, sampler::Variant::V2);
  EXPECT_DOUBLE_EQ(c.variant.rate_kbps, 2.0);
  EXPECT_DOUBLE_EQ(c.variant.tp_rate, 0.7628);
  EXPECT_EQ(c.machine.capacity(), 10u);
  EXPECT_EQ(parse(R"({"seed": 1, "variant": "noise-free"})").variant.tp_rate, 1.0);
}

TEST(Config, ErrorsNamePath) {
  EXPECT_NE(error_of(R"({"seed": 1, "machine": {"fb_entrys": 3}})").find("at /machine/fb_entrys: unknown field"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"trials": 2})").find("at /seed: missing required field"), std::string::npos);
  EXPECT_NE(error_of(R"({"seed": 1, "variant": "v9"})").find("at /variant: unknown variant preset 'v9'"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"seed": 1, "victim": {"kind": "aes", "key": "abc"}})").find("/victim/key"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"seed": 1, "attacker": {"byte_indices": [1, "x"]}})").find("/attacker/byte_indices/1"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"seed": -1})").find("/seed"), std::string::npos);
  EXPECT_NE(error_of(R"({"seed": 1, "calibration": {"tp_target": 1.5}})").find("infeasible target"),
            std::string::npos);
}

TEST(Config, SyntaxErrorsCarryLineAndColumn) {
  const auto msg = error_of("{\n  \"seed\": 1,\n  \"trials\": ,\n}");
  EXPECT_EQ(msg.rfind("config-error: t.json:3:", 0), 0u) << msg;
}

TEST(Config, MissingFileIsNamed) {
  try {
    load_config("/nonexistent/x.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.json"), std::string::npos);
  }
}

TEST(Config, DigestIsFnv1aOfCanonicalJson) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  const auto a = parse(R"({"seed": 1, "trials": 2})");
  const auto b = parse(R"({"trials": 2, "seed": 1})");
  EXPECT_EQ(scenario_digest(a), scenario_digest(b));
  EXPECT_EQ(scenario_digest(a).size(), 16u);
  EXPECT_NE(scenario_digest(a), scenario_digest(parse(R"({"seed": 2, "trials": 2})")));
}

// --------------------------------------------------------------------- report

TEST(Report, EnvelopeAndCsv) {
  const auto cfg = parse(R"({"seed": 9})");
  ExperimentOutput out;
  out.metrics = {{"knee", 12}, {"latency", {1, 2}}, {"name", "a,b"}};
  const auto r = make_report("fb-size", cfg, out);
  EXPECT_EQ(r["experiment"], "fb-size");
  EXPECT_EQ(r["seed"], 9);
  EXPECT_EQ(r["versions"]["zombieload"], kVersion);
  EXPECT_EQ(r["versions"]["report_format"], kReportFormat);
  EXPECT_EQ(r["scenario_digest"], scenario_digest(cfg));
  EXPECT_FALSE(r.contains("failure"));
  const auto csv = report_text(r, "csv");
  EXPECT_EQ(csv.rfind("key,value\nexperiment,fb-size\n", 0), 0u);
  EXPECT_NE(csv.find("metrics.latency.1,2\n"), std::string::npos);
  EXPECT_NE(csv.find("metrics.name,\"a,b\"\n"), std::string::npos);
  out.failure = "x";
  EXPECT_EQ(make_report("fb-size", cfg, out)["failure"], "x");
}

// -------------------------------------------------------------------- victims

TEST(Victims, AesLoadsKeyAfterEveryTrigger) {
  uarch::Machine m;
  AesVictimConfig c;
  c.key = random_key(3);
  c.loads = 50;
  const auto v = victim_aes(m, c);
  std::size_t fetches = 0;
  for (std::size_t i = 0; i < v.ops.size(); ++i) {
    if (v.ops[i].op.kind != uarch::OpKind::Fetch) continue;
    ++fetches;
    EXPECT_EQ(v.ops[i].op.vaddr, v.trigger.watched_line);
    ASSERT_LT(i + 2, v.ops.size());
    EXPECT_EQ(v.ops[i + 2].op.kind, uarch::OpKind::Read);
    EXPECT_EQ(v.ops[i + 2].op.vaddr, v.key_addr);
  }
  EXPECT_EQ(fetches, c.loads);
  EXPECT_EQ(v.key_loads.size(), c.loads);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(m.read_arch(uarch::CoreId::c0, c.asid, v.key_addr + i), c.key[i]);
  EXPECT_TRUE(std::is_sorted(v.ops.begin(), v.ops.end(), [](auto& a, auto& b) { return a.at < b.at; }));
}

TEST(Victims, SecretReloadKeepsSecretInFillBuffer) {
  uarch::Machine m;
  SecretReloadConfig c;
  c.secret = {1, 2, 3, 4};
  c.duration = 1000;
  const auto v = victim_secret_reload(m, c);
  uarch::OpCursor cur(v.ops);
  cur.advance(m, 999);
  bool found = false;
  for (const auto& e : m.fill_buffer().entries()) found = found || std::equal(c.secret.begin(), c.secret.end(), e.data.begin());
  EXPECT_TRUE(found);
  c.interval = 3;
  EXPECT_THROW(victim_secret_reload(m, c), Error);
}

TEST(Victims, BrowseWritesHostEveryRequest) {
  for (const char* site : {"nytimes", "gnupg"}) {
    uarch::Machine m;
    BrowseVictimConfig c;
    c.site = site_profile(site);
    c.reloads = 3;
    const auto v = victim_browse(m, c);
    ASSERT_EQ(v.reload_starts.size(), 3u);
    std::string text;
    for (const auto& op : v.ops)
      if (op.op.kind == uarch::OpKind::WriteLine) text.append(op.op.line.begin(), op.op.line.end());
    std::size_t hosts = 0;
    for (auto pos = text.find("Host: www." + c.site.host); pos != std::string::npos;
         pos = text.find("Host: www." + c.site.host, pos + 1))
      ++hosts;
    EXPECT_EQ(hosts, 3 * c.site.requests_per_reload) << site;
  }
  EXPECT_GT(site_profile("nytimes").requests_per_reload, site_profile("kernel").requests_per_reload);
  EXPECT_THROW(site_profile("example"), Error);
}

TEST(Victims, GadgetLeaksOnlyWhenMispredicting) {
  for (double mis : {0.0, 0.5}) {
    uarch::Machine m;
    GadgetVictimConfig c;
    c.secret = 0x53;
    c.mispredict = mis;
    c.noise_weight = 0.0;
    c.duration = 200'000;
    const auto v = victim_gadget(m, c);
    const auto secret_frame = m.translate(c.asid, v.secret_addr);
    std::size_t secret_fills = 0;
    for (const auto& op : v.ops) {
      const auto r = uarch::execute(m, op.core, op.op);
      if (r.fb_slot && m.fill_buffer()[*r.fb_slot].full_line_addr == secret_frame.line_base()) ++secret_fills;
    }
    EXPECT_FALSE(m.l1_contains(secret_frame));  // never loaded architecturally
    if (mis == 0.0) {
      EXPECT_EQ(secret_fills, 0u);
      EXPECT_EQ(v.speculative_loads, 0u);
    } else {
      EXPECT_GT(secret_fills, 0u);
      EXPECT_EQ(secret_fills, v.speculative_loads);
    }
  }
}

TEST(Victims, KernelNoiseIsMostlyZeroAndOnes) {
  const auto w = kernel_noise_weights();
  double sum = 0;
  for (double x : w) sum += x;
  EXPECT_NEAR(sum, 1.0, 1e-9);
  EXPECT_DOUBLE_EQ(w[0x00], 0.25);
  EXPECT_DOUBLE_EQ(w[0xFF], 0.15);
}

// ---------------------------------------------------------------- experiments

TEST(Experiments, TargetedNoiseOffFindsPlantedByte) {
  GadgetParams g;
  g.noise_weight = 0.0;
  const auto t = run_targeted({}, sampler::noise_free(), g, 0x53, 1.0, {}, 11);
  ASSERT_TRUE(t.result);
  EXPECT_EQ(t.result->value, 0x53);
  EXPECT_GT(t.result->confidence, 0.9);
}

TEST(Experiments, TargetedZeroSecretIsNoSignal) {
  GadgetParams g;
  g.noise_weight = 0.0;
  EXPECT_FALSE(run_targeted({}, sampler::noise_free(), g, 0x00, 1.0, {}, 11).result);
}

TEST(Experiments, FbSizeReportsKnee) {
  auto cfg = parse(R"({"seed": 1, "machine": {"uarch": "pre-skylake"}, "fb_size": {"repeats": 20}})");
  const auto out = run_experiment("fb-size", cfg);
  EXPECT_EQ(out.metrics["knee"], 10);
  EXPECT_EQ(out.files.at(0).first, "curve.csv");
  EXPECT_EQ(out.files.at(0).second.rfind("n,latency\n1,", 0), 0u);
}

TEST(Experiments, TrialsMergeInOrderWithDerivedSeeds) {
  auto cfg = parse(R"({"seed": 77, "trials": 5})");
  Runner r = [](const ScenarioConfig&, std::uint64_t seed) {
    ExperimentOutput o;
    o.metrics = {{"seed_low", seed & 0xFF}, {"odd", seed % 2 == 1}};
    o.files.emplace_back("f.txt", std::to_string(seed));
    if (seed % 2) o.failure = "odd";
    return o;
  };
  const auto out = run_trials(cfg, r);
  ASSERT_EQ(out.metrics["per_trial"].size(), 5u);
  std::size_t odd = 0;
  double sum = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto s = mix_seed(77, i);
    EXPECT_EQ(out.metrics["per_trial"][i]["trial_seed"], s);
    EXPECT_EQ(out.files[i].first, "trial" + std::to_string(i) + "_f.txt");
    EXPECT_EQ(out.files[i].second, std::to_string(s));
    odd += s % 2;
    sum += static_cast<double>(s & 0xFF);
  }
  EXPECT_DOUBLE_EQ(out.metrics["summary"]["seed_low"]["mean"].get<double>(), sum / 5);
  EXPECT_DOUBLE_EQ(out.metrics["summary"]["odd"]["fraction_true"].get<double>(), static_cast<double>(odd) / 5);
  EXPECT_EQ(out.metrics["summary"]["failures"], odd);
  EXPECT_EQ(out.failure.has_value(), odd == 5);

  Runner all_fail = [](const ScenarioConfig&, std::uint64_t) {
    ExperimentOutput o;
    o.failure = "no";
    return o;
  };
  EXPECT_TRUE(run_trials(cfg, all_fail).failure);
  EXPECT_THROW(run_experiment("nope", cfg), Error);
}

TEST(Experiments, RepeatedRunsAreIdentical) {
  const auto cfg = load_config(std::string(ZL_SCENARIO_DIR) + "/aes_noise_free.json");
  const auto a = run_experiment("recover aes", cfg);
  const auto b = run_experiment("recover aes", cfg);
  EXPECT_EQ(a.metrics.dump(), b.metrics.dump());
  EXPECT_EQ(a.files, b.files);
  EXPECT_FALSE(a.failure);
}

TEST(Experiments, WrongVictimKindIsConfigError) {
  const auto cfg = parse(R"({"seed": 1, "victim": {"kind": "aes"}})");
  try {
    run_experiment("recover url", cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Experiments, MitigationResidualsByPolicy) {
  MitigationSpec spec;
  spec.trials = 100;
  const auto lru = mitigation_residuals({}, spec, 1);
  EXPECT_GT(std::count_if(lru.begin(), lru.end(), [](double r) { return r > 0; }), 90);
  uarch::MachineConfig rr;
  rr.replacement = uarch::ReplacementPolicy::RoundRobin;
  for (double r : mitigation_residuals(rr, spec, 1)) EXPECT_EQ(r, 0.0);
}

// ---------------------------------------------------------------- calibration

TEST(Calibration, ShippedFileMatchesCompiledConstants) {
  const auto j = read_json(fs::path(ZL_DATA_DIR) / "calibration.json");
  EXPECT_EQ(j["gadget"]["noise_weight"].get<double>(), calib::kGadgetNoiseWeight);
  const auto& k = j["constants"];
  EXPECT_EQ(k["sender_repeats"], calib::kSenderRepeats);
  EXPECT_EQ(k["sender_addresses"], calib::kSenderAddresses);
  EXPECT_EQ(k["sender_op_spacing"], calib::kSenderOpSpacing);
  EXPECT_EQ(k["ack_latency"], calib::kAckLatency);
  EXPECT_EQ(k["trigger_window"], calib::kTriggerWindow);
  EXPECT_EQ(k["probe_interval"], calib::kProbeInterval);
  EXPECT_EQ(k["gadget_mispredict"].get<double>(), calib::kGadgetMispredict);
  EXPECT_EQ(k["gadget_activity_jitter"].get<double>(), calib::kGadgetActivityJitter);
  EXPECT_EQ(k["gadget_noise_pool"], calib::kGadgetNoisePool);
  EXPECT_EQ(k["gadget_step"], calib::kGadgetStep);
  EXPECT_EQ(k["targeted_z"].get<double>(), calib::kTargetedZ);
  EXPECT_EQ(k["targeted_drift"].get<double>(), calib::kTargetedDrift);
  for (const auto& p : sampler::kPresets) {
    const auto& e = j["presets"][std::string(p.name)];
    EXPECT_TRUE(e["feasible"].get<bool>()) << p.name;
    EXPECT_NEAR(e["measured_tp"].get<double>(), p.true_positive_rate, 0.02) << p.name;
  }
}

TEST(Calibration, TrivialTargetNeedsNoBackground) {
  const auto cfg = load_config(std::string(ZL_SCENARIO_DIR) + "/calibrate_trivial.json");
  const auto out = run_experiment("calibrate", cfg);
  EXPECT_FALSE(out.failure);
  EXPECT_EQ(out.metrics["presets"]["v1-tsx"]["background_weight"].get<double>(), 0.0);
  EXPECT_EQ(out.files.at(0).first, "calibration.json");
}
