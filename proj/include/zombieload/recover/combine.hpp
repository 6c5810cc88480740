#pragma once

#include <algorithm>
#include <cmath>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "zombieload/recover/domino.hpp"
#include "zombieload/sampler/sampler.hpp"

namespace zl::recover {

using sampler::ByteDistribution;

struct KeyHypothesis {
  std::vector<Byte> bytes;
  double score = 0;  // natural-log probability
  std::size_t rank = 0;  // 1-based
};

struct CombineOptions {
  unsigned k = 4;
  double smoothing = 1.0;  // additive pseudo-count per value
};

namespace detail {

inline std::array<double, 256> log_table(const ByteDistribution& d, double eps) {
  std::array<double, 256> out;
  const double denom = static_cast<double>(d.total()) + 256.0 * eps;
  for (unsigned v = 0; v < 256; ++v) out[v] = std::log((static_cast<double>(d.counts[v]) + eps) / denom);
  return out;
}

}  // namespace detail

/// Score of one full candidate under the chain model.
inline double score_key(std::span<const ByteDistribution> per_byte, std::span<const ByteDistribution> per_domino,
                        std::span<const Byte> key, const CombineOptions& opt = {}) {
  double s = 0;
  for (std::size_t i = 0; i < key.size(); ++i) s += std::log(per_byte[i].probability(key[i], opt.smoothing));
  for (std::size_t i = 0; i + 1 < key.size(); ++i)
    s += std::log(per_domino[i].probability(domino(key[i], key[i + 1], opt.k), opt.smoothing));
  return s;
}

/// k-best Viterbi over the byte chain. Each position keeps the top_n partial
/// paths per byte value, which is enough to recover the global top_n.
/// Results are sorted by score, ties broken by lexicographic key order.
inline std::vector<KeyHypothesis> combine_key(std::span<const ByteDistribution> per_byte,
                                              std::span<const ByteDistribution> per_domino, std::size_t top_n,
                                              const CombineOptions& opt = {}) {
  const std::size_t n = per_byte.size();
  if (n == 0) throw Error(ErrorCode::ParameterError, "no byte distributions");
  if (per_domino.size() != n - 1)
    throw Error(ErrorCode::ParameterError, "expected " + std::to_string(n - 1) + " domino distributions");
  if (top_n == 0) throw Error(ErrorCode::ParameterError, "top_n must be >= 1");
  if (opt.smoothing <= 0) throw Error(ErrorCode::ParameterError, "smoothing must be > 0");
  for (std::size_t i = 0; i < n; ++i)
    if (per_byte[i].empty())
      throw Error(ErrorCode::InsufficientData, "no samples for key byte " + std::to_string(i));
  for (std::size_t i = 0; i + 1 < n; ++i)
    if (per_domino[i].empty())
      throw Error(ErrorCode::InsufficientData, "no samples for domino byte " + std::to_string(i));

  struct Node {
    double score;
    std::uint16_t prev_value;
    std::uint32_t prev_rank;
  };
  // layers[i][v]: best partial paths ending with byte v at position i, descending.
  std::vector<std::array<std::vector<Node>, 256>> layers(n);

  auto lp = detail::log_table(per_byte[0], opt.smoothing);
  for (unsigned v = 0; v < 256; ++v) layers[0][v].push_back({lp[v], 0, 0});

  std::array<std::array<Byte, 256>, 256> dom{};
  for (unsigned a = 0; a < 256; ++a)
    for (unsigned b = 0; b < 256; ++b) dom[a][b] = domino(static_cast<Byte>(a), static_cast<Byte>(b), opt.k);

  struct Head {
    double score;
    std::uint16_t a;
    std::uint32_t idx;
    bool operator<(const Head& o) const { return score < o.score || (score == o.score && a > o.a); }
  };

  for (std::size_t i = 1; i < n; ++i) {
    lp = detail::log_table(per_byte[i], opt.smoothing);
    const auto ld = detail::log_table(per_domino[i - 1], opt.smoothing);
    for (unsigned b = 0; b < 256; ++b) {
      std::priority_queue<Head> heap;
      for (unsigned a = 0; a < 256; ++a)
        heap.push({layers[i - 1][a][0].score + ld[dom[a][b]], static_cast<std::uint16_t>(a), 0});
      auto& out = layers[i][b];
      while (out.size() < top_n && !heap.empty()) {
        Head h = heap.top();
        heap.pop();
        out.push_back({h.score + lp[b], h.a, h.idx});
        const auto& src = layers[i - 1][h.a];
        if (h.idx + 1 < src.size())
          heap.push({src[h.idx + 1].score + ld[dom[h.a][b]], h.a, h.idx + 1});
      }
    }
  }

  std::vector<KeyHypothesis> all;
  for (unsigned v = 0; v < 256; ++v) {
    for (std::size_t r = 0; r < layers[n - 1][v].size(); ++r) {
      KeyHypothesis h;
      h.score = layers[n - 1][v][r].score;
      h.bytes.resize(n);
      unsigned cur = v;
      std::size_t idx = r;
      for (std::size_t i = n; i-- > 0;) {
        h.bytes[i] = static_cast<Byte>(cur);
        const Node& node = layers[i][cur][idx];
        cur = node.prev_value;
        idx = node.prev_rank;
      }
      all.push_back(std::move(h));
    }
  }
  std::sort(all.begin(), all.end(), [](const KeyHypothesis& x, const KeyHypothesis& y) {
    return x.score != y.score ? x.score > y.score : x.bytes < y.bytes;
  });
  if (all.size() > top_n) all.resize(top_n);
  for (std::size_t r = 0; r < all.size(); ++r) all[r].rank = r + 1;
  return all;
}

/// 1-based rank of `truth` in a candidate list, or 0 if absent.
inline std::size_t rank_of(std::span<const KeyHypothesis> ranked, std::span<const Byte> truth) {
  for (const auto& h : ranked)
    if (std::equal(h.bytes.begin(), h.bytes.end(), truth.begin(), truth.end())) return h.rank;
  return 0;
}

}  // namespace zl::recover
