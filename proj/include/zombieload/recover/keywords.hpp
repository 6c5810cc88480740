#pragma once

#include <span>
#include <string>
#include <vector>

#include "zombieload/sampler/sampler.hpp"

namespace zl::recover {

inline constexpr std::size_t kMaxKeywords = 4;
inline constexpr std::size_t kMaxKeywordBytes = 8;

struct KeywordMatch {
  std::size_t id = 0;
  Tick timestamp = 0;
  unsigned offset = 0;  // byte offset within the line

  bool operator==(const KeywordMatch&) const = default;
};

inline void check_keywords(std::span<const std::string> keywords) {
  if (keywords.size() > kMaxKeywords)
    throw Error(ErrorCode::ParameterError, "at most 4 keywords fit in the transient comparison");
  for (const auto& k : keywords)
    if (k.empty() || k.size() > kMaxKeywordBytes)
      throw Error(ErrorCode::ParameterError, "keyword '" + k + "' must be 1..8 bytes");
}

/// Matches within one reconstructed line. `known` marks leaked byte positions.
inline void match_line(std::span<const std::string> keywords, Tick t, const Line& line,
                       const std::array<bool, kLineSize>& known, std::vector<KeywordMatch>& out) {
  for (std::size_t id = 0; id < keywords.size(); ++id) {
    const auto& kw = keywords[id];
    for (std::size_t off = 0; off + kw.size() <= kLineSize; ++off) {
      bool hit = true;
      for (std::size_t j = 0; j < kw.size() && hit; ++j)
        hit = known[off + j] && line[off + j] == static_cast<Byte>(kw[j]);
      if (hit) out.push_back({id, t, static_cast<unsigned>(off)});
    }
  }
}

/// Samples sharing a timestamp come from one leaked line; a keyword matches
/// only if all of its bytes were leaked contiguously from that line.
inline std::vector<KeywordMatch> match_keywords(std::span<const sampler::ZombieSample> samples,
                                                std::span<const std::string> keywords) {
  check_keywords(keywords);
  std::vector<KeywordMatch> out;
  std::size_t i = 0;
  while (i < samples.size()) {
    const Tick t = samples[i].timestamp;
    Line line{};
    std::array<bool, kLineSize> known{};
    for (; i < samples.size() && samples[i].timestamp == t; ++i) {
      line[samples[i].byte_index & 0x3F] = samples[i].value;
      known[samples[i].byte_index & 0x3F] = true;
    }
    match_line(keywords, t, line, known, out);
  }
  return out;
}

inline std::vector<KeywordMatch> match_keywords(std::span<const sampler::LineSample> lines,
                                                std::span<const std::string> keywords) {
  check_keywords(keywords);
  std::vector<KeywordMatch> out;
  std::array<bool, kLineSize> all;
  all.fill(true);
  for (const auto& l : lines) match_line(keywords, l.timestamp, l.data, all, out);
  return out;
}

}  // namespace zl::recover
