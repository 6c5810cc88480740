#pragma once

#include <optional>
#include <vector>

#include "zombieload/common.hpp"
#include "zombieload/uarch/machine.hpp"

namespace zl::harness {

struct FbSizeSpec {
  std::size_t n_max = 20;
  std::size_t repeats = 1000;
  Tick jitter = 2;  // measurement noise added to each repeat, in ticks
  bool dual_core = false;  // stores alternate between both logical cores
  bool operator==(const FbSizeSpec&) const = default;
};

struct FbSizeCurve {
  std::vector<Tick> latency;  // latency[n - 1] for batches of n stores
  std::optional<std::size_t> knee;
};

/// Largest n whose next store costs more than c_store, i.e. the first n with
/// latency(n + 1) - latency(n) > c_store.
inline std::optional<std::size_t> find_knee(const std::vector<Tick>& latency, Tick c_store) {
  for (std::size_t i = 0; i + 1 < latency.size(); ++i)
    if (latency[i + 1] > latency[i] + c_store) return i + 1;
  return std::nullopt;
}

/// Times batches of n concurrent non-temporal stores for n = 1..n_max and
/// keeps the best of `repeats` runs for each n.
inline FbSizeCurve run_fb_size(const uarch::MachineConfig& mc, const FbSizeSpec& spec, std::uint64_t seed) {
  if (spec.n_max < 2) throw Error(ErrorCode::ParameterError, "fb-size needs n_max >= 2");
  if (spec.repeats == 0) throw Error(ErrorCode::ParameterError, "fb-size needs at least one repeat");
  const uarch::VirtAddr base{0x0B00'0000ULL};
  const uarch::PhysAddr frame{0x0B00'0000ULL};
  Rng rng(seed);
  FbSizeCurve curve;
  for (std::size_t n = 1; n <= spec.n_max; ++n) {
    uarch::Machine m(mc);
    const std::size_t pages = (n + 62) / 63;
    for (std::size_t p = 0; p < pages; ++p) m.map_page(0, base + p * kPageSize, frame + p * kPageSize, {});
    std::vector<uarch::StoreRequest> batch(n);
    for (std::size_t i = 0; i < n; ++i) {
      batch[i].core = spec.dual_core && i % 2 ? uarch::CoreId::c1 : uarch::CoreId::c0;
      batch[i].vaddr = base + (i / 63) * kPageSize + (i % 63) * kLineSize;
      batch[i].data.fill(static_cast<Byte>(i));
    }
    Tick best = kForever;
    for (std::size_t r = 0; r < spec.repeats; ++r) {
      const Tick t = m.store_nt_batch(batch) + (spec.jitter ? uniform_below(rng, spec.jitter + 1) : 0);
      best = std::min(best, t);
      m.tick(t);
    }
    curve.latency.push_back(best);
  }
  curve.knee = find_knee(curve.latency, mc.c_store);
  return curve;
}

}  // namespace zl::harness
