#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "patchguard/core/random.hpp"

// Brute-force references for the metrics: O(n²) pairwise AUROC and an
// F1 sweep over every distinct score.

namespace patchguard::testing {

using Labels = std::vector<std::uint8_t>;

inline double pairwise_auroc(const std::vector<float>& s, const Labels& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline double direct_f1(const std::vector<float>& s, const Labels& y, float t) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool p = s[i] >= t;
    if (p && y[i]) ++tp;
    if (p && !y[i]) ++fp;
    if (!p && y[i]) ++fn;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

inline double exhaustive_f1(const std::vector<float>& s, const Labels& y) {
  double best = 0.0;
  for (float t : std::set<float>(s.begin(), s.end())) best = std::max(best, direct_f1(s, y, t));
  return best;
}

// Coarse score grid so ties are common; `shift` moves positives up.
inline void random_instance(Rng& rng, std::size_t n, std::vector<float>& s, Labels& y, float shift = 0.1f) {
  s.resize(n);
  y.resize(n);
  const int levels = rng.uniform_int(2, 60);
  do {
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.3 ? 1 : 0;
      s[i] = static_cast<float>(rng.uniform_int(0, levels)) / static_cast<float>(levels) + (y[i] ? shift : 0.0f);
    }
  } while (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0);
}


}  // namespace patchguard::testing
