#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "zombieload/common.hpp"
#include "zombieload/sampler/sampler.hpp"
#include "zombieload/uarch/interleave.hpp"
#include "zombieload/uarch/machine.hpp"

// Synthetic victim programs. Each builder maps the pages it needs, plants
// memory contents and returns a tick-sorted op stream for core 0. None of them
// touch line index 63 of a page, which the attacker's probe uses.

namespace zl::harness {

using uarch::Asid;
using uarch::CoreId;
using uarch::Machine;
using uarch::Op;
using uarch::PhysAddr;
using uarch::TimedOp;
using uarch::VirtAddr;

inline void map_if_absent(Machine& m, Asid asid, VirtAddr v, PhysAddr frame, uarch::PteFlags flags = {}) {
  if (!m.find_pte(asid, v)) m.map_page(asid, v, frame, flags);
}

inline void sort_ops(std::vector<TimedOp>& ops) {
  std::stable_sort(ops.begin(), ops.end(), [](const TimedOp& a, const TimedOp& b) { return a.at < b.at; });
}

// ---------------------------------------------------------------- AES loader

using AesKey = std::array<Byte, 16>;

struct AesVictimConfig {
  AesKey key{};
  std::size_t loads = 10000;   // encryptions, one key load each
  Tick period = 1000;
  std::size_t noise_loads = 8;  // unrelated loads per encryption
  unsigned key_line = 5;
  Tick start = 0;
  std::uint64_t seed = 1;
  Asid asid = 1;
};

struct AesVictim {
  std::vector<TimedOp> ops;
  sampler::TriggerSpec trigger;
  VirtAddr key_addr;
  std::vector<Tick> key_loads;
};

/// Each encryption fetches the second line of the key-schedule routine (the
/// trigger), reloads the key line from memory, then does unrelated work.
inline AesVictim victim_aes(Machine& m, const AesVictimConfig& cfg) {
  if (cfg.key_line >= 63) throw Error(ErrorCode::ParameterError, "key line must be below 63");
  if (cfg.period < 8) throw Error(ErrorCode::ParameterError, "AES period too short");
  const VirtAddr code{0x0040'0000ULL}, key_page{0x0060'0000ULL}, noise_page{0x0070'0000ULL};
  const PhysAddr code_frame{0x0100'0000ULL}, key_frame{0x0200'0000ULL}, noise_frame{0x0210'0000ULL};
  map_if_absent(m, cfg.asid, code, code_frame);
  map_if_absent(m, cfg.asid, key_page, key_frame);
  map_if_absent(m, cfg.asid, noise_page, noise_frame);

  Rng rng(cfg.seed);
  AesVictim v;
  v.key_addr = key_page + cfg.key_line * kLineSize;
  v.trigger = {cfg.asid, code + kLineSize, sampler::TriggerMode::FlushReloadHit};

  Line key_line = random_line(rng);
  std::copy(cfg.key.begin(), cfg.key.end(), key_line.begin());
  m.poke_line(key_frame + cfg.key_line * kLineSize, key_line);
  for (unsigned l = 0; l < 63; ++l) m.poke_line(noise_frame + l * kLineSize, random_line(rng));

  v.ops.reserve(cfg.loads * (3 + 2 * cfg.noise_loads));
  v.key_loads.reserve(cfg.loads);
  std::vector<Tick> noise_at(cfg.noise_loads);
  for (std::size_t i = 0; i < cfg.loads; ++i) {
    const Tick t0 = cfg.start + i * cfg.period;
    v.ops.push_back({t0, CoreId::c0, Op::fetch(cfg.asid, v.trigger.watched_line)});
    v.ops.push_back({t0 + 1, CoreId::c0, Op::flush(cfg.asid, v.key_addr)});
    v.ops.push_back({t0 + 2, CoreId::c0, Op::read(cfg.asid, v.key_addr)});
    v.key_loads.push_back(t0 + 2);
    for (auto& t : noise_at) t = t0 + 3 + uniform_below(rng, cfg.period - 5);
    std::sort(noise_at.begin(), noise_at.end());
    for (Tick t : noise_at) {
      const auto addr = noise_page + uniform_below(rng, 63) * kLineSize;
      v.ops.push_back({t, CoreId::c0, Op::flush(cfg.asid, addr)});
      v.ops.push_back({t + 1, CoreId::c0, Op::read(cfg.asid, addr)});
    }
  }
  sort_ops(v.ops);
  return v;
}

// ------------------------------------------------------ fixed secret reloader

struct SecretReloadConfig {
  std::vector<Byte> secret;  // placed at offset 0 of the secret line
  Tick interval = 20;
  std::size_t noise_lines = 2;  // other lines rewritten each round (register save area)
  Tick duration = 1'000'000;
  Tick start = 0;
  std::uint64_t seed = 1;
  Asid asid = 2;
};

struct SecretReloadVictim {
  std::vector<TimedOp> ops;
  VirtAddr secret_addr;
};

/// A victim forced to reload the same secret line over and over, each round
/// followed by writes to a few unrelated lines.
inline SecretReloadVictim victim_secret_reload(Machine& m, const SecretReloadConfig& cfg) {
  if (cfg.secret.empty() || cfg.secret.size() > kLineSize)
    throw Error(ErrorCode::ParameterError, "secret must be 1..64 bytes");
  const Tick round = 2 * (1 + cfg.noise_lines);
  if (cfg.interval < round) throw Error(ErrorCode::ParameterError, "reload interval too short for noise lines");
  const VirtAddr page{0x0080'0000ULL};
  const PhysAddr frame{0x0220'0000ULL};
  map_if_absent(m, cfg.asid, page, frame);
  Rng rng(cfg.seed);
  SecretReloadVictim v;
  v.secret_addr = page + 2 * kLineSize;
  Line secret_line = random_line(rng);
  std::copy(cfg.secret.begin(), cfg.secret.end(), secret_line.begin());
  m.poke_line(frame + 2 * kLineSize, secret_line);

  for (Tick t0 = cfg.start; t0 + round <= cfg.start + cfg.duration; t0 += cfg.interval) {
    Tick t = t0;
    v.ops.push_back({t++, CoreId::c0, Op::flush(cfg.asid, v.secret_addr)});
    v.ops.push_back({t++, CoreId::c0, Op::read(cfg.asid, v.secret_addr)});
    // Spilled registers and stack: new contents every round.
    for (std::size_t l = 0; l < cfg.noise_lines; ++l) {
      const auto addr = page + (8 + l) * kLineSize;
      v.ops.push_back({t++, CoreId::c0, Op::write_line(cfg.asid, addr, random_line(rng))});
      ++t;
    }
  }
  return v;
}

// ------------------------------------------------------------------ browsing

struct SiteProfile {
  std::string host;                    // without "www."
  std::size_t requests_per_reload = 4;
  Tick request_spacing = 400;          // between consecutive requests of one reload
  std::size_t content_loads = 2;       // response loads after each request
  bool dynamic = false;
};

/// Request patterns loosely shaped after a few real sites: news and social
/// pages fire many requests per load, small project pages only a handful.
inline SiteProfile site_profile(std::string_view name) {
  if (name == "nytimes") return {"nytimes.com", 14, 250, 1, true};
  if (name == "facebook") return {"facebook.com", 18, 250, 1, true};
  if (name == "kernel") return {"kernel.org", 3, 400, 2, false};
  if (name == "gnupg") return {"gnupg.org", 1, 400, 2, false};
  throw Error(ErrorCode::ParameterError, "unknown site profile '" + std::string(name) + "'");
}

struct BrowseVictimConfig {
  SiteProfile site;
  std::size_t reloads = 40;
  Tick reload_interval = 20'000;  // 0 = back to back
  Tick start = 0;
  std::uint64_t seed = 1;
  Asid asid = 3;
};

struct BrowseVictim {
  std::vector<TimedOp> ops;
  std::vector<Tick> reload_starts;
};

inline std::string request_text(const std::string& host, Rng& rng) {
  static constexpr std::string_view kPaths[] = {"", "index.html", "static/app.js", "css/main.css",
                                                "img/logo.png", "api/v2/feed", "fonts/sans.woff2",
                                                "news/latest", "favicon.ico", "search?q=weather"};
  static constexpr std::string_view kAgents[] = {"Mozilla/5.0 (X11; Linux x86_64)",
                                                 "Mozilla/5.0 (Windows NT 10.0; Win64; x64)"};
  std::string s = "GET /";
  s += kPaths[uniform_below(rng, std::size(kPaths))];
  s += " HTTP/1.1\r\nHost: www." + host + "\r\nUser-Agent: ";
  s += kAgents[uniform_below(rng, std::size(kAgents))];
  s += "\r\nAccept: */*\r\nReferer: https://www." + host + "/\r\nConnection: keep-alive\r\n\r\n";
  return s;
}

/// Every reload issues the site's requests; each request is written into a
/// socket buffer at a random alignment (so the host name lands at varying line
/// offsets) and is followed by a few response loads.
inline BrowseVictim victim_browse(Machine& m, const BrowseVictimConfig& cfg) {
  if (cfg.site.host.empty()) throw Error(ErrorCode::ParameterError, "browse victim needs a host");
  const VirtAddr buf{0x0090'0000ULL}, content{0x00A0'0000ULL};
  const PhysAddr buf_frame{0x0230'0000ULL}, content_frame{0x0240'0000ULL};
  map_if_absent(m, cfg.asid, buf, buf_frame);
  map_if_absent(m, cfg.asid, content, content_frame);
  Rng rng(cfg.seed);
  for (unsigned l = 0; l < 63; ++l) m.poke_line(content_frame + l * kLineSize, random_line(rng));  // compressed bodies

  BrowseVictim v;
  unsigned buf_line = 0;
  Tick t = cfg.start;
  for (std::size_t r = 0; r < cfg.reloads; ++r) {
    const Tick reload_at = std::max(t, cfg.start + r * cfg.reload_interval);
    v.reload_starts.push_back(reload_at);
    t = reload_at;
    for (std::size_t q = 0; q < cfg.site.requests_per_reload; ++q) {
      const Tick req_at = t;
      std::string text(uniform_below(rng, kLineSize), ' ');
      text += request_text(cfg.site.host, rng);
      const std::size_t nlines = (text.size() + kLineSize - 1) / kLineSize;
      // Header lines are produced one at a time while the request is built.
      const Tick gap = std::max<Tick>(1, cfg.site.request_spacing / (nlines + 1));
      for (std::size_t off = 0; off < text.size(); off += kLineSize, t += gap) {
        Line l{};
        for (std::size_t i = 0; i < kLineSize && off + i < text.size(); ++i) l[i] = static_cast<Byte>(text[off + i]);
        v.ops.push_back({t, CoreId::c0, Op::write_line(cfg.asid, buf + buf_line * kLineSize, l)});
        buf_line = (buf_line + 1) % 63;
      }
      const Tick rest = req_at + cfg.site.request_spacing > t + 2 ? req_at + cfg.site.request_spacing - t - 2 : 1;
      for (std::size_t c = 0; c < cfg.site.content_loads; ++c) {
        const Tick at = t + uniform_below(rng, rest);
        const auto addr = content + uniform_below(rng, 63) * kLineSize;
        v.ops.push_back({at, CoreId::c0, Op::flush(cfg.asid, addr)});
        v.ops.push_back({at + 1, CoreId::c0, Op::read(cfg.asid, addr)});
      }
      t = req_at + cfg.site.request_spacing;
    }
  }
  sort_ops(v.ops);
  return v;
}

// ------------------------------------------------------------ prefetch gadget

/// Byte-value weights of kernel activity seen at a fixed line offset: mostly
/// zero and all-ones words, pointer-like high bytes, little printable text.
inline std::array<double, 256> kernel_noise_weights() {
  std::array<double, 256> w{};
  double hi = 0, lo = 0;
  for (unsigned v = 1; v < 255; ++v) {
    if (v >= 0x80) hi += 1.0 / (1 + (0xFE - v));
    else lo += 1.0 / v;
  }
  for (unsigned v = 1; v < 255; ++v) {
    if (v >= 0x80) w[v] = 0.45 * (1.0 / (1 + (0xFE - v))) / hi;
    else w[v] = 0.15 * (1.0 / v) / lo;
  }
  w[0x00] = 0.25;
  w[0xFF] = 0.15;
  return w;
}

struct GadgetVictimConfig {
  Byte secret = 0x53;
  unsigned secret_offset = 17;  // byte within the secret line
  std::size_t array_len = 16;
  Tick step = 200;
  double mispredict = 0.5;      // fraction of steps that leak out of bounds
  double noise_weight = 0.0;    // fraction of steps spent on unrelated kernel loads
  std::size_t noise_pool = 48;  // distinct kernel lines touched by noise
  double activity_jitter = 0.25;  // relative change of each noise line's popularity per epoch
  Tick epoch = kForever;          // default: one activity pattern per run
  Tick duration = 10'000'000;
  Tick start = 0;
  std::uint64_t layout_seed = 1;  // memory contents; keep fixed across runs
  std::uint64_t seed = 1;         // op stream
  Asid asid = 4;
};

struct GadgetVictim {
  std::vector<TimedOp> ops;
  VirtAddr array_addr;
  VirtAddr secret_addr;
  std::size_t speculative_loads = 0;
};

/// Kernel-side prefetch gadget `if (x < array_len) y = array[x]`, called once
/// per step. The array is L1-resident, so in-bounds calls leave the fill
/// buffer alone; a mispredicted out-of-bounds call speculatively pulls in the
/// secret line. Noise steps reload unrelated kernel lines.
inline GadgetVictim victim_gadget(Machine& m, const GadgetVictimConfig& cfg) {
  if (cfg.mispredict < 0 || cfg.mispredict > 1 || cfg.noise_weight < 0 || cfg.noise_weight > 1)
    throw Error(ErrorCode::ParameterError, "gadget fractions must be in [0,1]");
  if (cfg.secret_offset >= kLineSize) throw Error(ErrorCode::ParameterError, "secret offset must be < 64");
  if (cfg.array_len == 0 || cfg.array_len > 8 * kLineSize)
    throw Error(ErrorCode::ParameterError, "array length must be in [1,512]");
  if (cfg.noise_pool == 0 || cfg.noise_pool > 2 * 63) throw Error(ErrorCode::ParameterError, "noise pool must be 1..126");
  if (cfg.step < 4) throw Error(ErrorCode::ParameterError, "gadget step too short");
  if (cfg.activity_jitter < 0 || cfg.activity_jitter >= 1 || cfg.epoch == 0)
    throw Error(ErrorCode::ParameterError, "activity jitter must be in [0,1) and epoch > 0");

  uarch::PteFlags kernel;
  kernel.user_accessible = false;
  const VirtAddr data{0xFFFF'C900'0000'0000ULL}, noise{0xFFFF'C900'0001'0000ULL};
  const PhysAddr data_frame{0x0250'0000ULL}, noise_frame{0x0260'0000ULL};
  map_if_absent(m, cfg.asid, data, data_frame, kernel);
  map_if_absent(m, cfg.asid, noise, noise_frame, kernel);
  map_if_absent(m, cfg.asid, noise + kPageSize, noise_frame + kPageSize, kernel);

  Rng layout(cfg.layout_seed);
  GadgetVictim v;
  v.array_addr = data;
  v.secret_addr = data + 16 * kLineSize;
  Line secret_line = random_line(layout);
  secret_line[cfg.secret_offset] = cfg.secret;
  m.poke_line(data_frame + 16 * kLineSize, secret_line);

  const auto weights = kernel_noise_weights();
  std::discrete_distribution<unsigned> noise_byte(weights.begin(), weights.end());
  std::vector<VirtAddr> pool;
  for (std::size_t i = 0; i < cfg.noise_pool; ++i) {
    const std::size_t page = i / 63, line = i % 63;
    Line l;
    for (auto& b : l) b = static_cast<Byte>(noise_byte(layout));
    m.poke_line(noise_frame + page * kPageSize + line * kLineSize, l);
    pool.push_back(noise + page * kPageSize + line * kLineSize);
  }

  Rng rng(cfg.seed);
  // Kernel activity is not stationary: which noise lines are hot changes
  // from one epoch to the next.
  std::discrete_distribution<std::size_t> pick_line;
  Tick epoch_end = cfg.start;
  std::vector<double> activity(pool.size());
  const auto sup = uarch::Privilege::Supervisor;
  for (Tick t = cfg.start; t + 2 <= cfg.start + cfg.duration; t += cfg.step) {
    if (t >= epoch_end) {
      for (auto& a : activity) a = 1.0 + cfg.activity_jitter * (2.0 * uniform01(rng) - 1.0);
      pick_line = std::discrete_distribution<std::size_t>(activity.begin(), activity.end());
      epoch_end = saturating_add(t, cfg.epoch);
    }
    if (bernoulli(rng, cfg.noise_weight)) {
      const auto addr = pool[pick_line(rng)];
      v.ops.push_back({t, CoreId::c0, Op::flush(cfg.asid, addr)});
      v.ops.push_back({t + 1, CoreId::c0, Op::read(cfg.asid, addr, sup)});
      continue;
    }
    v.ops.push_back({t, CoreId::c0, Op::read(cfg.asid, data + uniform_below(rng, cfg.array_len), sup)});
    if (bernoulli(rng, cfg.mispredict)) {
      v.ops.push_back({t + 1, CoreId::c0, Op::spec_load(cfg.asid, v.secret_addr + cfg.secret_offset)});
      ++v.speculative_loads;
    }
  }
  return v;
}

}  // namespace zl::harness
