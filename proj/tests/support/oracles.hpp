#pragma once

// Independent reference implementations used to pin the metric code:
// a plain recursive edit distance and exhaustive optimal matching.

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <map>
#include <vector>

#include "umeg/metrics.hpp"

namespace umeg::testing {

// Full-table Levenshtein, written independently of the library's rolling rows.
inline int oracle_levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = d[i - 1][j - 1] + (a[i - 1] != b[j - 1]);
      d[i][j] = std::min(sub, std::min(d[i - 1][j], d[i][j - 1]) + 1);
    }
  }
  return d[a.size()][b.size()];
}

inline double oracle_edit(const head::EventSequence& pred, const head::EventSequence& gt) {
  std::vector<int> a, b;
  for (const auto& e : pred) a.push_back(e.class_id);
  for (const auto& e : gt) b.push_back(e.class_id);
  const std::size_t n = std::max(a.size(), b.size());
  if (n == 0) return 100.0;
  return std::max(0.0, 100.0 * (1.0 - static_cast<double>(oracle_levenshtein(a, b)) / n));
}

// Maximum number of disjoint (pred, gt) pairs within tolerance, by trying
// every assignment.
inline int oracle_max_matching(const std::vector<int>& pred, const std::vector<int>& gt, int tol) {
  std::vector<bool> used(gt.size(), false);
  std::function<int(std::size_t)> best = [&](std::size_t i) -> int {
    if (i == pred.size()) return 0;
    int b = best(i + 1);  // leave pred i unmatched
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (used[j] || std::abs(pred[i] - gt[j]) > tol) continue;
      used[j] = true;
      b = std::max(b, 1 + best(i + 1));
      used[j] = false;
    }
    return b;
  };
  return best(0);
}

inline metrics::F1Result oracle_f1(const head::EventSequence& pred, const head::EventSequence& gt,
                                   int tol) {
  std::map<int, std::vector<int>> p, g;
  for (const auto& e : pred) p[e.class_id].push_back(e.frame);
  for (const auto& e : gt) g[e.class_id].push_back(e.frame);
  std::map<int, metrics::ClassCounts> counts;
  for (const auto& [c, v] : p) counts[c];
  for (const auto& [c, v] : g) counts[c];
  for (auto& [c, k] : counts) {
    const int tp = oracle_max_matching(p[c], g[c], tol);
    k.tp = tp;
    k.fp = static_cast<int>(p[c].size()) - tp;
    k.fn = static_cast<int>(g[c].size()) - tp;
  }
  metrics::F1Result r;
  double sum = 0.0;
  for (const auto& [c, k] : counts) {
    const double f = 2.0 * k.tp / (2.0 * k.tp + k.fp + k.fn);
    r.per_class[c] = f;
    sum += f;
  }
  if (!counts.empty()) r.mean = sum / static_cast<double>(counts.size());
  return r;
}

}  // namespace umeg::testing
