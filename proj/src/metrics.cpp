#include "umeg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "umeg/errors.hpp"

namespace umeg::metrics {

int levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace {
std::vector<int> classes_of(const EventSequence& s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& e : s) out.push_back(e.class_id);
  return out;
}
}  // namespace

double edit_score(const EventSequence& pred, const EventSequence& gt) {
  const std::size_t longest = std::max(pred.size(), gt.size());
  if (longest == 0) return 100.0;
  const int d = levenshtein(classes_of(pred), classes_of(gt));
  return std::max(0.0, 100.0 * (1.0 - static_cast<double>(d) / static_cast<double>(longest)));
}

MatchResult match_events(const EventSequence& pred, const EventSequence& gt, int tolerance) {
  require(tolerance >= 0, "match_events: tolerance must be >= 0");
  std::map<int, std::vector<int>> pred_by, gt_by;
  for (const auto& e : pred) pred_by[e.class_id].push_back(e.frame);
  for (const auto& e : gt) gt_by[e.class_id].push_back(e.frame);
  MatchResult r;
  for (auto& [c, frames] : pred_by) r.per_class[c];
  for (auto& [c, frames] : gt_by) r.per_class[c];
  for (auto& [c, counts] : r.per_class) {
    std::vector<int>& p = pred_by[c];
    std::vector<int>& g = gt_by[c];
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    std::vector<bool> used(g.size(), false);
    std::size_t lo = 0;
    for (int f : p) {
      while (lo < g.size() && (used[lo] || g[lo] < f - tolerance)) ++lo;
      bool hit = false;
      for (std::size_t i = lo; i < g.size() && g[i] <= f + tolerance; ++i) {
        if (!used[i]) {
          used[i] = true;
          r.pairs.emplace_back(f, g[i]);
          hit = true;
          break;
        }
      }
      if (hit) ++counts.tp;
      else ++counts.fp;
    }
    counts.fn = static_cast<int>(g.size()) - counts.tp;
  }
  return r;
}

F1Result f1_from_counts(const std::map<int, ClassCounts>& counts) {
  F1Result r;
  double sum = 0.0;
  for (const auto& [c, k] : counts) {
    const int denom = 2 * k.tp + k.fp + k.fn;
    if (denom == 0) continue;
    const double f1 = 2.0 * k.tp / denom;
    r.per_class[c] = f1;
    sum += f1;
  }
  if (!r.per_class.empty()) r.mean = sum / static_cast<double>(r.per_class.size());
  return r;
}

F1Result f1_at_tolerance(const EventSequence& pred, const EventSequence& gt, int tolerance) {
  return f1_from_counts(match_events(pred, gt, tolerance).per_class);
}

int seconds_to_frames(double seconds, double fps) {
  require(seconds >= 0.0 && fps > 0.0, "seconds_to_frames: bad arguments");
  return static_cast<int>(std::lround(seconds * fps));
}

ClipResult evaluate_clip(const std::string& clip_id, const EventSequence& pred,
                         const EventSequence& gt, int tolerance) {
  return {clip_id, match_events(pred, gt, tolerance), edit_score(pred, gt)};
}

Report aggregate(std::span<const ClipResult> results) {
  if (results.empty()) throw ConfigError("aggregate: empty eval set");
  std::map<int, ClassCounts> pooled;
  double edit = 0.0;
  for (const ClipResult& r : results) {
    for (const auto& [c, k] : r.match.per_class) {
      ClassCounts& p = pooled[c];
      p.tp += k.tp;
      p.fp += k.fp;
      p.fn += k.fn;
    }
    edit += r.edit;
  }
  const F1Result f1 = f1_from_counts(pooled);
  Report rep;
  rep.f1_evt = f1.mean;
  rep.per_class_f1 = f1.per_class;
  rep.edit = edit / static_cast<double>(results.size());
  rep.clips = static_cast<int>(results.size());
  return rep;
}

Report evaluate(const std::map<std::string, EventSequence>& predictions,
                std::span<const data::KeypointClip> clips, int tolerance) {
  std::vector<ClipResult> results;
  static const EventSequence kEmpty;
  for (const data::KeypointClip& c : clips) {
    const auto it = predictions.find(c.clip_id);
    results.push_back(evaluate_clip(c.clip_id, it == predictions.end() ? kEmpty : it->second,
                                    c.labels, tolerance));
  }
  return aggregate(results);
}

double chance_f1(std::span<const data::KeypointClip> clips, int tolerance, int draws,
                 std::uint64_t seed) {
  require(draws >= 1, "chance_f1: need at least one draw");
  if (clips.empty()) throw ConfigError("chance_f1: empty eval set");
  std::map<int, int> freq;
  for (const auto& c : clips) {
    for (const auto& l : c.labels) ++freq[l.class_id];
  }
  std::vector<int> cls;
  std::vector<double> weight;
  for (const auto& [c, n] : freq) {
    cls.push_back(c);
    weight.push_back(n);
  }
  std::mt19937_64 rng(seed);
  double total = 0.0;
  for (int d = 0; d < draws; ++d) {
    std::vector<ClipResult> results;
    for (const auto& c : clips) {
      EventSequence pred;
      const int n = static_cast<int>(c.labels.size());
      if (n > 0) {
        std::vector<int> frames(static_cast<std::size_t>(c.length()));
        std::iota(frames.begin(), frames.end(), 0);
        std::vector<int> pick;
        std::sample(frames.begin(), frames.end(), std::back_inserter(pick), std::min(n, c.length()), rng);
        std::discrete_distribution<int> prior(weight.begin(), weight.end());
        for (int f : pick) pred.push_back({cls[static_cast<std::size_t>(prior(rng))], f});
      }
      results.push_back(evaluate_clip(c.clip_id, pred, c.labels, tolerance));
    }
    total += aggregate(results).f1_evt;
  }
  return total / draws;
}

}  // namespace umeg::metrics
