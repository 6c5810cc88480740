#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "zombieload/common.hpp"

namespace zl::sampler {

enum class Variant : std::uint8_t { V1, V2 };
enum class Suppression : std::uint8_t { TSX, SignalHandler, Speculation };

/// Content of unrelated loads that a failed attempt picks up instead of
/// victim data. An empty corpus means uniformly random lines.
class BackgroundSource {
 public:
  BackgroundSource() = default;

  static BackgroundSource uniform() { return {}; }

  static BackgroundSource weighted(std::vector<Line> corpus, std::vector<double> weights = {}) {
    if (weights.empty()) weights.assign(corpus.size(), 1.0);
    if (weights.size() != corpus.size())
      throw Error(ErrorCode::ParameterError, "background weights must match corpus size");
    BackgroundSource s;
    s.corpus_ = std::move(corpus);
    double acc = 0;
    for (double w : weights) {
      if (w < 0) throw Error(ErrorCode::ParameterError, "negative background weight");
      acc += w;
      s.cdf_.push_back(acc);
    }
    if (!s.corpus_.empty() && acc <= 0) throw Error(ErrorCode::ParameterError, "background weights sum to 0");
    return s;
  }

  bool is_uniform() const { return corpus_.empty(); }
  std::size_t size() const { return corpus_.size(); }

  Line draw(Rng& rng) const {
    if (corpus_.empty()) return random_line(rng);
    const double u = uniform01(rng) * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), corpus_.size() - 1);
    return corpus_[i];
  }

 private:
  std::vector<Line> corpus_;
  std::vector<double> cdf_;
};

struct VariantConfig {
  std::string name = "custom";
  Variant variant = Variant::V1;
  Suppression suppression = Suppression::TSX;
  double bytes_per_second = 5300.0;
  double true_positive_rate = 0.8574;
  BackgroundSource background;

  double attempts_per_tick() const { return bytes_per_second / kTicksPerSecond; }
};

struct PresetSpec {
  std::string_view name;
  Variant variant;
  Suppression suppression;
  double kilobytes_per_second;
  double true_positive_rate;
};

// Measured leakage rates of the three attack variants (1 KB = 1000 bytes).
inline constexpr std::array<PresetSpec, 3> kPresets{{
    {"v1-tsx", Variant::V1, Suppression::TSX, 5.30, 0.8574},
    {"v2-signal", Variant::V2, Suppression::SignalHandler, 0.08, 0.527},
    {"v2-tsx", Variant::V2, Suppression::TSX, 7.73, 0.7628},
}};

inline VariantConfig preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name != name) continue;
    VariantConfig c;
    c.name = std::string(p.name);
    c.variant = p.variant;
    c.suppression = p.suppression;
    c.bytes_per_second = p.kilobytes_per_second * 1000.0;
    c.true_positive_rate = p.true_positive_rate;
    return c;
  }
  throw Error(ErrorCode::ParameterError, "unknown variant preset '" + std::string(name) + "'");
}

/// Lossless configuration for tests and the noise-off scenarios.
inline VariantConfig noise_free(double bytes_per_second = 5300.0) {
  VariantConfig c;
  c.name = "noise-free";
  c.bytes_per_second = bytes_per_second;
  c.true_positive_rate = 1.0;
  return c;
}

}  // namespace zl::sampler
