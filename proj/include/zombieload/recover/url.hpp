#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zombieload/sampler/sampler.hpp"
#include "zombieload/uarch/interleave.hpp"

namespace zl::recover {

inline const std::vector<std::string>& default_tlds() {
  static const std::vector<std::string> tlds{".com", ".org", ".net", ".io", ".gov", ".edu"};
  return tlds;
}

inline bool hostname_char(Byte c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' || c == '-';
}

/// Grows host-name candidates one leaked character at a time. Each attempt
/// compares the last four characters of one leaf candidate against the leaked
/// line and, on an exact in-line match, leaks the character that follows.
class UrlTracker {
 public:
  explicit UrlTracker(std::vector<std::string> tlds = default_tlds(), std::string root = "www.")
      : tlds_(std::move(tlds)), root_(std::move(root)) {
    if (root_.size() < 4) throw Error(ErrorCode::ParameterError, "url root must be at least 4 characters");
  }

  /// Processes one attempt. Returns true once a candidate is complete.
  bool feed(const Line& line) {
    if (done()) return true;
    if (nodes_.empty()) {
      if (find(line, root_)) nodes_.push_back({root_, false, false});
      return false;
    }
    std::vector<std::size_t> leaves;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (!nodes_[i].has_child && !nodes_[i].complete) leaves.push_back(i);
    if (leaves.empty()) return false;
    const std::size_t idx = leaves[turn_++ % leaves.size()];
    const std::string suffix = nodes_[idx].text.substr(nodes_[idx].text.size() - 4);
    auto off = find(line, suffix, 1);
    if (!off) return false;
    const Byte next = line[*off + 4];
    if (!hostname_char(next)) return false;
    std::string text = nodes_[idx].text + static_cast<char>(next);
    nodes_[idx].has_child = true;
    const bool complete = std::any_of(tlds_.begin(), tlds_.end(), [&](const std::string& tld) {
      return text.size() >= tld.size() + root_.size() && text.ends_with(tld);
    });
    nodes_.push_back({text, false, complete});
    if (complete && !result_) result_ = text;
    return complete;
  }

  bool done() const { return result_.has_value(); }
  const std::optional<std::string>& result() const { return result_; }

  std::vector<std::string> candidates() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_) out.push_back(n.text);
    return out;
  }

 private:
  struct Node {
    std::string text;
    bool has_child;
    bool complete;
  };

  /// Offset of an exact match leaving at least `tail` bytes after it in the line.
  static std::optional<std::size_t> find(const Line& line, std::string_view s, std::size_t tail = 0) {
    for (std::size_t off = 0; off + s.size() + tail <= kLineSize; ++off)
      if (std::equal(s.begin(), s.end(), line.begin() + off, [](char a, Byte b) { return static_cast<Byte>(a) == b; }))
        return off;
    return std::nullopt;
  }

  std::vector<std::string> tlds_;
  std::string root_;
  std::vector<Node> nodes_;
  std::size_t turn_ = 0;
  std::optional<std::string> result_;
};

struct UrlAttackConfig {
  std::size_t max_reloads = 50;
  std::vector<std::string> tlds = default_tlds();
};

struct UrlResult {
  std::optional<std::string> url;
  std::size_t reloads_used = 0;
  std::vector<std::string> candidates;
  std::size_t attempts = 0;
};

/// Samples while the browsing victim reloads its page, until a candidate
/// reaches a known top-level domain or `max_reloads` reloads have passed.
inline UrlResult recover_url(uarch::Machine& m, const sampler::VariantConfig& vcfg,
                             std::span<const uarch::TimedOp> victim, std::span<const Tick> reload_starts,
                             const UrlAttackConfig& cfg, std::uint64_t seed) {
  if (reload_starts.empty()) throw Error(ErrorCode::ParameterError, "victim performs no reloads");
  const Tick start = m.now();
  Tick end = victim.empty() ? start : victim.back().at + 1;
  if (cfg.max_reloads < reload_starts.size()) end = reload_starts[cfg.max_reloads];

  const auto probe = sampler::prepare_attacker(m, vcfg.variant);
  uarch::OpCursor cursor(victim);
  UrlTracker tracker(cfg.tlds);
  UrlResult res;
  Tick finished = end;
  sampler::run_attempts(m, vcfg, probe, start, end > start ? end - start : 0, seed,
                        [&](Tick t) { cursor.advance(m, t); },
                        [&](Tick t, const Line& line, sampler::Truth) -> bool {
                          ++res.attempts;
                          if (!tracker.feed(line)) return true;
                          finished = t;
                          return false;
                        });
  res.url = tracker.result();
  res.candidates = tracker.candidates();
  res.reloads_used = static_cast<std::size_t>(
      std::upper_bound(reload_starts.begin(), reload_starts.end(), finished - (res.url ? 0 : 1)) -
      reload_starts.begin());
  return res;
}

}  // namespace zl::recover
