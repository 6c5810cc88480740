#pragma once

#include <array>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "zombieload/common.hpp"
#include "zombieload/harness/calibration.hpp"
#include "zombieload/harness/fb_size.hpp"
#include "zombieload/harness/victims.hpp"
#include "zombieload/recover/targeted.hpp"
#include "zombieload/recover/url.hpp"
#include "zombieload/sampler/variant.hpp"
#include "zombieload/uarch/machine.hpp"

// Scenario files. Every field is optional except `seed`; anything not listed
// here is rejected with its JSON-pointer path. See README for the schema.

namespace zl::harness {

using json = nlohmann::json;

struct VariantSpec {
  std::string name = "v1-tsx";  // preset name, "noise-free" or "custom"
  sampler::Variant variant = sampler::Variant::V1;
  sampler::Suppression suppression = sampler::Suppression::TSX;
  double rate_kbps = 5.30;
  double tp_rate = 0.8574;

  sampler::VariantConfig to_config() const {
    sampler::VariantConfig c;
    c.name = name;
    c.variant = variant;
    c.suppression = suppression;
    c.bytes_per_second = rate_kbps * 1000.0;
    c.true_positive_rate = tp_rate;
    return c;
  }

  bool operator==(const VariantSpec&) const = default;
};

inline VariantSpec variant_from_preset(const std::string& name) {
  VariantSpec v;
  v.name = name;
  if (name == "noise-free") {
    v.tp_rate = 1.0;
    return v;
  }
  const auto p = sampler::preset(name);
  v.variant = p.variant;
  v.suppression = p.suppression;
  v.rate_kbps = p.bytes_per_second / 1000.0;
  v.tp_rate = p.true_positive_rate;
  return v;
}

struct AesParams {
  std::optional<AesKey> key;  // random per trial if absent
  std::size_t loads = 10'000;
  Tick period = 1000;
  std::size_t noise_loads = 8;
  unsigned key_line = 5;
  bool operator==(const AesParams&) const = default;
};

struct BrowseParams {
  std::string site = "kernel";
  SiteProfile profile = site_profile("kernel");
  std::size_t reloads = 60;
  Tick reload_interval = 20'000;
  bool operator==(const BrowseParams& o) const {
    return site == o.site && profile.host == o.profile.host &&
           profile.requests_per_reload == o.profile.requests_per_reload &&
           profile.request_spacing == o.profile.request_spacing &&
           profile.content_loads == o.profile.content_loads && profile.dynamic == o.profile.dynamic &&
           reloads == o.reloads && reload_interval == o.reload_interval;
  }
};

struct GadgetParams {
  std::optional<Byte> secret;  // random printable character per trial if absent
  unsigned secret_offset = 17;
  std::size_t array_len = 16;
  Tick step = calib::kGadgetStep;
  double mispredict = calib::kGadgetMispredict;
  double noise_weight = calib::kGadgetNoiseWeight;
  double activity_jitter = calib::kGadgetActivityJitter;
  std::size_t noise_pool = calib::kGadgetNoisePool;
  bool operator==(const GadgetParams&) const = default;
};

struct CovertParams {
  std::optional<std::string> payload_text;  // otherwise `payload_bytes` seeded random bytes
  std::size_t payload_bytes = 10'240;
  std::size_t repeats = calib::kSenderRepeats;
  std::size_t addresses = calib::kSenderAddresses;
  Tick op_spacing = calib::kSenderOpSpacing;
  Byte prefix = 0xC3;
  bool operator==(const CovertParams&) const = default;
};

struct PageSpec {
  uarch::Asid asid = 1;
  std::uint64_t vaddr = 0;
  std::uint64_t frame = 0;
  bool user = true;
  bool accessed = true;
  bool operator==(const PageSpec&) const = default;
};

struct TraceOpSpec {
  Tick at = 0;
  unsigned core = 0;
  uarch::OpKind op = uarch::OpKind::Read;
  uarch::Asid asid = 1;
  std::uint64_t vaddr = 0;
  Byte value = 0;
  bool operator==(const TraceOpSpec&) const = default;
};

struct TraceParams {
  std::string pattern = "secret-reload";  // or "ops"
  std::vector<Byte> secret;               // secret-reload: random 16 bytes per trial if empty
  Tick interval = 20;
  std::size_t noise_lines = 2;
  std::vector<PageSpec> pages;  // ops
  std::vector<TraceOpSpec> ops; // ops
  bool operator==(const TraceParams&) const = default;
};

struct VictimSpec {
  std::string kind = "none";  // none|aes|browse|gadget|covert-sender|custom-trace
  AesParams aes;
  BrowseParams browse;
  GadgetParams gadget;
  CovertParams covert;
  TraceParams trace;
  bool operator==(const VictimSpec&) const = default;
};

struct AttackerSpec {
  double duration_s = 1.0;
  std::size_t budget = 10'000;  // victim key loads (aes)
  Tick trigger_window = calib::kTriggerWindow;
  Tick probe_interval = calib::kProbeInterval;
  std::size_t top_n = 16;
  unsigned k = 4;
  double probe_seconds = 10.0;
  recover::LeakMode mode = recover::LeakMode::Raw;
  double z = calib::kTargetedZ;
  double drift = calib::kTargetedDrift;
  std::size_t window = 128;
  Tick ack_latency = calib::kAckLatency;
  double max_seconds = 60.0;
  std::size_t max_reloads = 50;
  std::vector<std::string> tlds = recover::default_tlds();
  std::vector<std::string> keywords;
  std::vector<Byte> byte_indices{0};
  bool all_indices_per_attempt = false;
  bool trace = false;
  bool operator==(const AttackerSpec&) const = default;
};

struct MitigationSpec {
  bool flush_l1 = true;
  std::optional<std::size_t> stuffing_loads;  // default: fill-buffer capacity
  std::size_t trials = 1000;
  std::size_t warmup_loads = 64;
  bool operator==(const MitigationSpec&) const = default;
};

struct CalibrationSpec {
  std::vector<std::string> presets{"v1-tsx", "v2-signal", "v2-tsx"};
  std::optional<double> tp_target;  // overrides the presets' own rates
  double tp_grid_step = 0.005;
  std::size_t attempts = 20'000;
  double gadget_target = 0.38;
  double gadget_probe_seconds = 10.0;
  std::size_t gadget_trials = 40;
  std::vector<double> gadget_grid{0.98, 0.9825, 0.9835, 0.985, 0.9875};
  bool operator==(const CalibrationSpec&) const = default;
};

struct ScenarioConfig {
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  uarch::MachineConfig machine;
  VariantSpec variant;
  VictimSpec victim;
  AttackerSpec attacker;
  FbSizeSpec fb_size;
  std::optional<MitigationSpec> mitigation;
  CalibrationSpec calibration;
  bool operator==(const ScenarioConfig&) const = default;
};

// ------------------------------------------------------------------ parsing

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
  throw Error(ErrorCode::ConfigError, "at " + (path.empty() ? std::string("/") : path) + ": " + msg);
}

inline std::string hex_string(std::span<const Byte> bytes) {
  std::string s;
  for (Byte b : bytes) s += hex_byte(b);
  return s;
}

inline std::vector<Byte> parse_hex_bytes(const std::string& s, const std::string& path) {
  std::string h = s.rfind("0x", 0) == 0 ? s.substr(2) : s;
  if (h.size() % 2 != 0) fail(path, "hex string must have an even number of digits");
  std::vector<Byte> out;
  for (std::size_t i = 0; i < h.size(); i += 2) {
    unsigned v = 0;
    for (std::size_t j = i; j < i + 2; ++j) {
      const char c = h[j];
      v <<= 4;
      if (c >= '0' && c <= '9') v |= c - '0';
      else if (c >= 'a' && c <= 'f') v |= c - 'a' + 10;
      else if (c >= 'A' && c <= 'F') v |= c - 'A' + 10;
      else fail(path, "invalid hex digit '" + std::string(1, c) + "'");
    }
    out.push_back(static_cast<Byte>(v));
  }
  return out;
}

/// Reads the fields of one JSON object and rejects whatever was not read.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) fail(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  bool get(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v || v->is_null()) return false;  // null means unset
    read(*v, at(key), out);
    return true;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) fail(at(it.key()), "unknown field");
  }

  static void read(const json& v, const std::string& p, bool& out) {
    if (!v.is_boolean()) fail(p, "expected true or false");
    out = v.get<bool>();
  }
  static void read(const json& v, const std::string& p, double& out) {
    if (!v.is_number()) fail(p, "expected a number");
    out = v.get<double>();
  }
  static void read(const json& v, const std::string& p, std::string& out) {
    if (!v.is_string()) fail(p, "expected a string");
    out = v.get<std::string>();
  }
  static void read(const json& v, const std::string& p, std::uint64_t& out) {
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
    } else if (v.is_string()) {
      const auto s = v.get<std::string>();
      char* end = nullptr;
      out = std::strtoull(s.c_str(), &end, 0);
      if (s.empty() || *end != '\0' || s[0] == '-') fail(p, "expected an unsigned integer");
    } else {
      fail(p, "expected an unsigned integer");
    }
  }
  static void read(const json& v, const std::string& p, unsigned& out) {
    std::uint64_t x;
    read(v, p, x);
    if (x > 0xFFFF'FFFFULL) fail(p, "value too large");
    out = static_cast<unsigned>(x);
  }
  static void read(const json& v, const std::string& p, Byte& out) {
    if (v.is_string() && v.get<std::string>().size() == 1) {
      out = static_cast<Byte>(v.get<std::string>()[0]);
      return;
    }
    std::uint64_t x;
    read(v, p, x);
    if (x > 255) fail(p, "expected a byte (0..255)");
    out = static_cast<Byte>(x);
  }
  template <class T>
  static void read(const json& v, const std::string& p, std::optional<T>& out) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    T x{};
    read(v, p, x);
    out = x;
  }
  template <class T>
  static void read(const json& v, const std::string& p, std::vector<T>& out) {
    if (!v.is_array()) fail(p, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T x{};
      read(v[i], p + "/" + std::to_string(i), x);
      out.push_back(x);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E, std::size_t N>
E parse_enum(const json& v, const std::string& p, const std::array<std::pair<const char*, E>, N>& table) {
  if (!v.is_string()) fail(p, "expected a string");
  const auto s = v.get<std::string>();
  std::string options;
  for (const auto& [name, e] : table) {
    if (s == name) return e;
    options += options.empty() ? name : std::string(", ") + name;
  }
  fail(p, "unknown value '" + s + "' (expected one of: " + options + ")");
}

template <class E, std::size_t N>
std::string enum_name(E e, const std::array<std::pair<const char*, E>, N>& table) {
  for (const auto& [name, x] : table)
    if (x == e) return name;
  return "?";
}

inline constexpr std::array<std::pair<const char*, uarch::Uarch>, 2> kUarchNames{
    {{"pre-skylake", uarch::Uarch::PreSkylake}, {"skylake", uarch::Uarch::Skylake}}};
inline constexpr std::array<std::pair<const char*, uarch::ReplacementPolicy>, 2> kPolicyNames{
    {{"round-robin", uarch::ReplacementPolicy::RoundRobin},
     {"pseudo-lru-reuse", uarch::ReplacementPolicy::PseudoLruReuse}}};
inline constexpr std::array<std::pair<const char*, sampler::Variant>, 2> kVariantNames{
    {{"v1", sampler::Variant::V1}, {"v2", sampler::Variant::V2}}};
inline constexpr std::array<std::pair<const char*, sampler::Suppression>, 3> kSuppressionNames{
    {{"tsx", sampler::Suppression::TSX},
     {"signal-handler", sampler::Suppression::SignalHandler},
     {"speculation", sampler::Suppression::Speculation}}};
inline constexpr std::array<std::pair<const char*, recover::LeakMode>, 2> kModeNames{
    {{"raw", recover::LeakMode::Raw}, {"ascii7", recover::LeakMode::Ascii7}}};
inline const std::set<std::string> kVictimKinds{"none", "aes", "browse", "gadget", "covert-sender", "custom-trace"};

inline void check(bool ok, const std::string& path, const std::string& msg) {
  if (!ok) fail(path, msg);
}

inline void parse_machine(const json& j, const std::string& path, uarch::MachineConfig& m) {
  Obj o(j, path);
  if (auto* v = o.find("uarch")) m.uarch = parse_enum(*v, o.at("uarch"), kUarchNames);
  std::optional<std::uint64_t> fb;
  if (o.get("fb_entries", fb)) {
    check(!fb || (*fb >= 1 && *fb <= 64), o.at("fb_entries"), "must be in 1..64");
    m.fb_entries = fb ? std::optional<std::size_t>(*fb) : std::nullopt;
  }
  o.get("c_store", m.c_store);
  o.get("c_stall", m.c_stall);
  if (auto* v = o.find("replacement_policy")) m.replacement = parse_enum(*v, o.at("replacement_policy"), kPolicyNames);
  if (o.get("reuse_probability", m.reuse_probability))
    check(m.reuse_probability >= 0 && m.reuse_probability <= 1, o.at("reuse_probability"), "must be in [0,1]");
  o.get("replacement_seed", m.replacement_seed);
  o.get("stale_allocated_eligible", m.stale_allocated_eligible);
  o.done();
}

inline void parse_variant(const json& j, const std::string& path, VariantSpec& v) {
  auto from_name = [&](const std::string& name, const std::string& p) {
    try {
      v = variant_from_preset(name);
    } catch (const Error&) {
      fail(p, "unknown variant preset '" + name + "' (expected v1-tsx, v2-signal, v2-tsx or noise-free)");
    }
  };
  if (j.is_string()) {
    from_name(j.get<std::string>(), path);
    return;
  }
  Obj o(j, path);
  std::string name;
  if (o.get("preset", name)) from_name(name, o.at("preset"));
  if (o.get("name", name)) v.name = name;
  if (auto* x = o.find("variant")) v.variant = parse_enum(*x, o.at("variant"), kVariantNames);
  if (auto* x = o.find("suppression")) v.suppression = parse_enum(*x, o.at("suppression"), kSuppressionNames);
  if (o.get("rate_kbps", v.rate_kbps)) check(v.rate_kbps > 0, o.at("rate_kbps"), "must be > 0");
  if (o.get("tp_rate", v.tp_rate)) check(v.tp_rate >= 0 && v.tp_rate <= 1, o.at("tp_rate"), "must be in [0,1]");
  o.done();
}

inline void parse_victim(const json& j, const std::string& path, VictimSpec& v) {
  Obj o(j, path);
  o.get("kind", v.kind);
  check(kVictimKinds.contains(v.kind), o.at("kind"),
        "unknown victim kind '" + v.kind + "' (expected aes, browse, gadget, covert-sender, custom-trace or none)");
  if (v.kind == "aes") {
    auto& a = v.aes;
    std::string key;
    if (o.get("key", key)) {
      auto bytes = parse_hex_bytes(key, o.at("key"));
      check(bytes.size() == 16, o.at("key"), "AES key must be 16 bytes (32 hex digits)");
      AesKey k;
      std::copy(bytes.begin(), bytes.end(), k.begin());
      a.key = k;
    }
    o.get("loads", a.loads);
    if (o.get("period", a.period)) check(a.period >= 8, o.at("period"), "must be >= 8");
    o.get("noise_loads", a.noise_loads);
    if (o.get("key_line", a.key_line)) check(a.key_line < 63, o.at("key_line"), "must be < 63");
  } else if (v.kind == "browse") {
    auto& b = v.browse;
    if (o.get("site", b.site)) {
      if (b.site != "custom") {
        try {
          b.profile = site_profile(b.site);
        } catch (const Error&) {
          fail(o.at("site"), "unknown site '" + b.site + "' (expected nytimes, facebook, kernel, gnupg or custom)");
        }
      }
    }
    o.get("host", b.profile.host);
    check(!b.profile.host.empty(), o.at("host"), "host must not be empty");
    o.get("requests_per_reload", b.profile.requests_per_reload);
    if (o.get("request_spacing", b.profile.request_spacing))
      check(b.profile.request_spacing >= 8, o.at("request_spacing"), "must be >= 8");
    o.get("content_loads", b.profile.content_loads);
    o.get("dynamic", b.profile.dynamic);
    if (o.get("reloads", b.reloads)) check(b.reloads >= 1, o.at("reloads"), "must be >= 1");
    o.get("reload_interval", b.reload_interval);
  } else if (v.kind == "gadget") {
    auto& g = v.gadget;
    o.get("secret", g.secret);
    if (o.get("secret_offset", g.secret_offset)) check(g.secret_offset < 64, o.at("secret_offset"), "must be < 64");
    o.get("array_len", g.array_len);
    o.get("step", g.step);
    if (o.get("mispredict", g.mispredict))
      check(g.mispredict >= 0 && g.mispredict <= 1, o.at("mispredict"), "must be in [0,1]");
    if (o.get("noise_weight", g.noise_weight))
      check(g.noise_weight >= 0 && g.noise_weight <= 1, o.at("noise_weight"), "must be in [0,1]");
    if (o.get("activity_jitter", g.activity_jitter))
      check(g.activity_jitter >= 0 && g.activity_jitter < 1, o.at("activity_jitter"), "must be in [0,1)");
    o.get("noise_pool", g.noise_pool);
  } else if (v.kind == "covert-sender") {
    auto& c = v.covert;
    o.get("payload_text", c.payload_text);
    if (o.get("payload_bytes", c.payload_bytes)) check(c.payload_bytes >= 1, o.at("payload_bytes"), "must be >= 1");
    if (o.get("repeats", c.repeats)) check(c.repeats >= 1, o.at("repeats"), "must be >= 1");
    if (o.get("addresses", c.addresses)) check(c.addresses >= 1 && c.addresses <= 62, o.at("addresses"), "must be in 1..62");
    if (o.get("op_spacing", c.op_spacing)) check(c.op_spacing >= 1, o.at("op_spacing"), "must be >= 1");
    o.get("prefix", c.prefix);
  } else if (v.kind == "custom-trace") {
    auto& t = v.trace;
    o.get("pattern", t.pattern);
    check(t.pattern == "secret-reload" || t.pattern == "ops", o.at("pattern"),
          "unknown pattern '" + t.pattern + "' (expected secret-reload or ops)");
    std::string secret;
    if (o.get("secret", secret)) {
      t.secret = parse_hex_bytes(secret, o.at("secret"));
      check(t.secret.size() >= 2 && t.secret.size() <= 64, o.at("secret"), "secret must be 2..64 bytes");
    }
    o.get("interval", t.interval);
    o.get("noise_lines", t.noise_lines);
    if (auto* pages = o.find("pages")) {
      check(pages->is_array(), o.at("pages"), "expected an array");
      for (std::size_t i = 0; i < pages->size(); ++i) {
        Obj po((*pages)[i], o.at("pages") + "/" + std::to_string(i));
        PageSpec ps;
        po.get("asid", ps.asid);
        po.get("vaddr", ps.vaddr);
        po.get("frame", ps.frame);
        po.get("user", ps.user);
        po.get("accessed", ps.accessed);
        po.done();
        t.pages.push_back(ps);
      }
    }
    if (auto* ops = o.find("ops")) {
      check(ops->is_array(), o.at("ops"), "expected an array");
      for (std::size_t i = 0; i < ops->size(); ++i) {
        const std::string p = o.at("ops") + "/" + std::to_string(i);
        Obj oo((*ops)[i], p);
        TraceOpSpec ts;
        oo.get("at", ts.at);
        if (oo.get("core", ts.core)) check(ts.core <= 1, oo.at("core"), "core must be 0 or 1");
        std::string kind;
        if (oo.get("op", kind)) {
          auto k = uarch::parse_op_kind(kind);
          check(k.has_value(), oo.at("op"), "unknown op '" + kind + "'");
          ts.op = *k;
        }
        oo.get("asid", ts.asid);
        oo.get("vaddr", ts.vaddr);
        oo.get("value", ts.value);
        oo.done();
        t.ops.push_back(ts);
      }
    }
  }
  o.done();
}

inline void parse_attacker(const json& j, const std::string& path, AttackerSpec& a) {
  Obj o(j, path);
  if (o.get("duration_s", a.duration_s)) check(a.duration_s >= 0, o.at("duration_s"), "must be >= 0");
  o.get("budget", a.budget);
  o.get("trigger_window", a.trigger_window);
  if (o.get("probe_interval", a.probe_interval)) check(a.probe_interval >= 1, o.at("probe_interval"), "must be >= 1");
  if (o.get("top_n", a.top_n)) check(a.top_n >= 1, o.at("top_n"), "must be >= 1");
  if (o.get("k", a.k)) check(a.k >= 1 && a.k <= 7, o.at("k"), "must be in 1..7");
  if (o.get("probe_seconds", a.probe_seconds)) check(a.probe_seconds > 0, o.at("probe_seconds"), "must be > 0");
  if (auto* v = o.find("mode")) a.mode = parse_enum(*v, o.at("mode"), kModeNames);
  o.get("z", a.z);
  o.get("drift", a.drift);
  if (o.get("window", a.window)) check(a.window >= 1 && a.window <= 128, o.at("window"), "must be in 1..128");
  o.get("ack_latency", a.ack_latency);
  if (o.get("max_seconds", a.max_seconds)) check(a.max_seconds > 0, o.at("max_seconds"), "must be > 0");
  o.get("max_reloads", a.max_reloads);
  o.get("tlds", a.tlds);
  if (o.get("keywords", a.keywords)) {
    check(a.keywords.size() <= 4, o.at("keywords"), "at most 4 keywords");
    for (std::size_t i = 0; i < a.keywords.size(); ++i)
      check(!a.keywords[i].empty() && a.keywords[i].size() <= 8, o.at("keywords") + "/" + std::to_string(i),
            "keywords must be 1..8 bytes");
  }
  if (o.get("byte_indices", a.byte_indices)) {
    check(!a.byte_indices.empty(), o.at("byte_indices"), "must not be empty");
    for (std::size_t i = 0; i < a.byte_indices.size(); ++i)
      check(a.byte_indices[i] < 64, o.at("byte_indices") + "/" + std::to_string(i), "must be < 64");
  }
  o.get("all_indices_per_attempt", a.all_indices_per_attempt);
  o.get("trace", a.trace);
  o.done();
}

inline void parse_fb_size(const json& j, const std::string& path, FbSizeSpec& f) {
  Obj o(j, path);
  if (o.get("n_max", f.n_max)) check(f.n_max >= 2 && f.n_max <= 256, o.at("n_max"), "must be in 2..256");
  if (o.get("repeats", f.repeats)) check(f.repeats >= 1, o.at("repeats"), "must be >= 1");
  o.get("jitter", f.jitter);
  o.get("dual_core", f.dual_core);
  o.done();
}

inline void parse_mitigation(const json& j, const std::string& path, MitigationSpec& m) {
  Obj o(j, path);
  o.get("flush_l1", m.flush_l1);
  o.get("stuffing_loads", m.stuffing_loads);
  if (o.get("trials", m.trials)) check(m.trials >= 1, o.at("trials"), "must be >= 1");
  o.get("warmup_loads", m.warmup_loads);
  o.done();
}

inline void parse_calibration(const json& j, const std::string& path, CalibrationSpec& c) {
  Obj o(j, path);
  if (o.get("presets", c.presets))
    for (std::size_t i = 0; i < c.presets.size(); ++i) {
      try {
        sampler::preset(c.presets[i]);
      } catch (const Error&) {
        fail(o.at("presets") + "/" + std::to_string(i), "unknown preset '" + c.presets[i] + "'");
      }
    }
  if (o.get("tp_target", c.tp_target) && c.tp_target)
    check(*c.tp_target >= 0 && *c.tp_target <= 1, o.at("tp_target"),
          "infeasible target: a true-positive rate must be in [0,1]");
  if (o.get("tp_grid_step", c.tp_grid_step))
    check(c.tp_grid_step > 0 && c.tp_grid_step <= 0.5, o.at("tp_grid_step"), "must be in (0,0.5]");
  if (o.get("attempts", c.attempts)) check(c.attempts >= 100, o.at("attempts"), "must be >= 100");
  if (o.get("gadget_target", c.gadget_target))
    check(c.gadget_target >= 0 && c.gadget_target <= 1, o.at("gadget_target"), "must be in [0,1]");
  if (o.get("gadget_probe_seconds", c.gadget_probe_seconds))
    check(c.gadget_probe_seconds > 0, o.at("gadget_probe_seconds"), "must be > 0");
  o.get("gadget_trials", c.gadget_trials);
  if (o.get("gadget_grid", c.gadget_grid))
    for (std::size_t i = 0; i < c.gadget_grid.size(); ++i)
      check(c.gadget_grid[i] >= 0 && c.gadget_grid[i] <= 1, o.at("gadget_grid") + "/" + std::to_string(i),
            "must be in [0,1]");
  o.done();
}

inline std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

inline ScenarioConfig parse_config(const json& j) {
  ScenarioConfig c;
  detail::Obj o(j, "");
  if (!o.get("seed", c.seed)) detail::fail("/seed", "missing required field");
  if (o.get("trials", c.trials)) detail::check(c.trials >= 1, "/trials", "must be >= 1");
  if (auto* v = o.find("machine")) detail::parse_machine(*v, "/machine", c.machine);
  if (auto* v = o.find("variant")) detail::parse_variant(*v, "/variant", c.variant);
  if (auto* v = o.find("victim")) detail::parse_victim(*v, "/victim", c.victim);
  if (auto* v = o.find("attacker")) detail::parse_attacker(*v, "/attacker", c.attacker);
  if (auto* v = o.find("fb_size")) detail::parse_fb_size(*v, "/fb_size", c.fb_size);
  if (auto* v = o.find("mitigation"); v && !v->is_null()) {
    MitigationSpec m;
    detail::parse_mitigation(*v, "/mitigation", m);
    c.mitigation = m;
  }
  if (auto* v = o.find("calibration")) detail::parse_calibration(*v, "/calibration", c.calibration);
  o.done();
  return c;
}

/// Parses scenario text; syntax errors name `source` with line and column.
inline ScenarioConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string what = e.what();
    if (auto pos = what.find("syntax error"); pos != std::string::npos) what = what.substr(pos);
    throw Error(ErrorCode::ConfigError,
                source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }
  try {
    return parse_config(j);
  } catch (const Error& e) {
    std::string what = e.what();
    const std::string prefix = std::string(to_string(ErrorCode::ConfigError)) + ": ";
    if (what.rfind(prefix, 0) == 0) what = what.substr(prefix.size());
    throw Error(ErrorCode::ConfigError, source + ": " + what);
  }
}

inline ScenarioConfig load_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config file '" + file + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), file);
}

// ------------------------------------------------------------ serialization

inline json to_json(const uarch::MachineConfig& m) {
  using namespace detail;
  json j;
  j["uarch"] = enum_name(m.uarch, kUarchNames);
  j["fb_entries"] = m.fb_entries ? json(*m.fb_entries) : json(nullptr);
  j["c_store"] = m.c_store;
  j["c_stall"] = m.c_stall;
  j["replacement_policy"] = enum_name(m.replacement, kPolicyNames);
  j["reuse_probability"] = m.reuse_probability;
  j["replacement_seed"] = m.replacement_seed;
  j["stale_allocated_eligible"] = m.stale_allocated_eligible;
  return j;
}

inline json to_json(const VariantSpec& v) {
  using namespace detail;
  return {{"name", v.name},
          {"variant", enum_name(v.variant, kVariantNames)},
          {"suppression", enum_name(v.suppression, kSuppressionNames)},
          {"rate_kbps", v.rate_kbps},
          {"tp_rate", v.tp_rate}};
}

inline json to_json(const VictimSpec& v) {
  using detail::hex_string;
  json j;
  j["kind"] = v.kind;
  if (v.kind == "aes") {
    const auto& a = v.aes;
    j["key"] = a.key ? json(hex_string(*a.key)) : json(nullptr);
    j["loads"] = a.loads;
    j["period"] = a.period;
    j["noise_loads"] = a.noise_loads;
    j["key_line"] = a.key_line;
  } else if (v.kind == "browse") {
    const auto& b = v.browse;
    j["site"] = b.site;
    j["host"] = b.profile.host;
    j["requests_per_reload"] = b.profile.requests_per_reload;
    j["request_spacing"] = b.profile.request_spacing;
    j["content_loads"] = b.profile.content_loads;
    j["dynamic"] = b.profile.dynamic;
    j["reloads"] = b.reloads;
    j["reload_interval"] = b.reload_interval;
  } else if (v.kind == "gadget") {
    const auto& g = v.gadget;
    j["secret"] = g.secret ? json(*g.secret) : json(nullptr);
    j["secret_offset"] = g.secret_offset;
    j["array_len"] = g.array_len;
    j["step"] = g.step;
    j["mispredict"] = g.mispredict;
    j["noise_weight"] = g.noise_weight;
    j["activity_jitter"] = g.activity_jitter;
    j["noise_pool"] = g.noise_pool;
  } else if (v.kind == "covert-sender") {
    const auto& c = v.covert;
    j["payload_text"] = c.payload_text ? json(*c.payload_text) : json(nullptr);
    j["payload_bytes"] = c.payload_bytes;
    j["repeats"] = c.repeats;
    j["addresses"] = c.addresses;
    j["op_spacing"] = c.op_spacing;
    j["prefix"] = c.prefix;
  } else if (v.kind == "custom-trace") {
    const auto& t = v.trace;
    j["pattern"] = t.pattern;
    if (!t.secret.empty()) j["secret"] = hex_string(t.secret);
    j["interval"] = t.interval;
    j["noise_lines"] = t.noise_lines;
    json pages = json::array();
    for (const auto& p : t.pages)
      pages.push_back({{"asid", p.asid}, {"vaddr", hex_u64(p.vaddr)}, {"frame", hex_u64(p.frame)},
                       {"user", p.user}, {"accessed", p.accessed}});
    j["pages"] = pages;
    json ops = json::array();
    for (const auto& o : t.ops)
      ops.push_back({{"at", o.at}, {"core", o.core}, {"op", std::string(uarch::to_string(o.op))},
                     {"asid", o.asid}, {"vaddr", hex_u64(o.vaddr)}, {"value", o.value}});
    j["ops"] = ops;
  }
  return j;
}

inline json to_json(const AttackerSpec& a) {
  using namespace detail;
  return {{"duration_s", a.duration_s},
          {"budget", a.budget},
          {"trigger_window", a.trigger_window},
          {"probe_interval", a.probe_interval},
          {"top_n", a.top_n},
          {"k", a.k},
          {"probe_seconds", a.probe_seconds},
          {"mode", enum_name(a.mode, kModeNames)},
          {"z", a.z},
          {"drift", a.drift},
          {"window", a.window},
          {"ack_latency", a.ack_latency},
          {"max_seconds", a.max_seconds},
          {"max_reloads", a.max_reloads},
          {"tlds", a.tlds},
          {"keywords", a.keywords},
          {"byte_indices", a.byte_indices},
          {"all_indices_per_attempt", a.all_indices_per_attempt},
          {"trace", a.trace}};
}

inline json to_json(const ScenarioConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["machine"] = to_json(c.machine);
  j["variant"] = to_json(c.variant);
  j["victim"] = to_json(c.victim);
  j["attacker"] = to_json(c.attacker);
  j["fb_size"] = {{"n_max", c.fb_size.n_max},
                  {"repeats", c.fb_size.repeats},
                  {"jitter", c.fb_size.jitter},
                  {"dual_core", c.fb_size.dual_core}};
  if (c.mitigation) {
    const auto& m = *c.mitigation;
    j["mitigation"] = {{"flush_l1", m.flush_l1},
                       {"stuffing_loads", m.stuffing_loads ? json(*m.stuffing_loads) : json(nullptr)},
                       {"trials", m.trials},
                       {"warmup_loads", m.warmup_loads}};
  }
  const auto& k = c.calibration;
  j["calibration"] = {{"presets", k.presets},
                      {"tp_target", k.tp_target ? json(*k.tp_target) : json(nullptr)},
                      {"tp_grid_step", k.tp_grid_step},
                      {"attempts", k.attempts},
                      {"gadget_target", k.gadget_target},
                      {"gadget_probe_seconds", k.gadget_probe_seconds},
                      {"gadget_trials", k.gadget_trials},
                      {"gadget_grid", k.gadget_grid}};
  return j;
}

inline std::string canonical_text(const ScenarioConfig& c) { return to_json(c).dump(2) + "\n"; }

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string scenario_digest(const ScenarioConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
  return buf;
}

}  // namespace zl::harness
