#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sgn/corpus.hpp"

namespace testutil {

using sgn::TokenIds;

// Reference scorer: n-grams keyed by their text, precisions multiplied and
// rooted instead of averaged in log space.
inline double oracle_bleu(const std::vector<TokenIds>& cands, const std::vector<TokenIds>& refs, bool arithmetic) {
  auto grams = [](const TokenIds& t, std::size_t n) {
    std::map<std::string, int> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::ostringstream key;
      for (std::size_t k = i; k < i + n; ++k) key << t[k] << ',';
      ++m[key.str()];
    }
    return m;
  };
  double c_len = 0, r_len = 0;
  std::vector<double> hit(4, 0), all(4, 0);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c_len += static_cast<double>(cands[i].size());
    r_len += static_cast<double>(refs[i].size());
    for (std::size_t n = 1; n <= 4; ++n) {
      auto cg = grams(cands[i], n), rg = grams(refs[i], n);
      for (auto& [g, k] : cg) {
        all[n - 1] += k;
        hit[n - 1] += std::min(k, rg.count(g) ? rg[g] : 0);
      }
    }
  }
  if (c_len == 0) return 0;
  const double bp = c_len < r_len ? std::exp(1 - r_len / c_len) : 1.0;
  if (arithmetic) {
    double s = 0;
    for (int n = 0; n < 4; ++n) s += all[n] > 0 ? hit[n] / all[n] : 0;
    return bp * s / 4;
  }
  double prod = 1;
  for (int n = 0; n < 4; ++n) prod *= all[n] > 0 ? hit[n] / all[n] : 0;
  return bp * std::pow(prod, 0.25);
}

// Memoised recursive LCS.
inline std::size_t oracle_lcs(const TokenIds& a, const TokenIds& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    return memo[key] = v;
  };
  return go(0, 0);
}

inline double oracle_rouge(const std::vector<TokenIds>& cands, const std::vector<TokenIds>& refs) {
  double total = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const double l = static_cast<double>(oracle_lcs(cands[i], refs[i]));
    if (l == 0) continue;
    // F = 2 L / (|c| + |r|) is the harmonic mean of L/|c| and L/|r|.
    total += 2 * l / static_cast<double>(cands[i].size() + refs[i].size());
  }
  return total / static_cast<double>(cands.size());
}

}  // namespace testutil
