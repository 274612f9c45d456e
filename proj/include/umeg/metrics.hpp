#pragma once

// Segmental edit score and per-class F1 within a temporal tolerance, plus the
// pooled report over an eval set and a random-placement chance baseline.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "umeg/event_head.hpp"
#include "umeg/keypoint_data.hpp"

namespace umeg::metrics {

using head::EventSequence;

int levenshtein(std::span<const int> a, std::span<const int> b);

// 100·(1 − lev/max(|pred|, |gt|)) over class strings; 100 when both empty.
double edit_score(const EventSequence& pred, const EventSequence& gt);

struct ClassCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct MatchResult {
  std::map<int, ClassCounts> per_class;
  // (pred frame, gt frame) for every true positive.
  std::vector<std::pair<int, int>> pairs;
};

// Per class, predictions in frame order claim the earliest unmatched ground
// truth event within ±tolerance.
MatchResult match_events(const EventSequence& pred, const EventSequence& gt, int tolerance);

struct F1Result {
  std::map<int, double> per_class;
  // Mean over classes seen in pred or gt; 1 when neither has any event.
  double mean = 1.0;
};

F1Result f1_from_counts(const std::map<int, ClassCounts>& counts);
F1Result f1_at_tolerance(const EventSequence& pred, const EventSequence& gt, int tolerance);

// Tolerance given in seconds, rounded to the nearest frame count.
int seconds_to_frames(double seconds, double fps);

struct ClipResult {
  std::string clip_id;
  MatchResult match;
  double edit = 0.0;
};

ClipResult evaluate_clip(const std::string& clip_id, const EventSequence& pred,
                         const EventSequence& gt, int tolerance);

struct Report {
  double f1_evt = 0.0;  // in [0, 1]
  double edit = 0.0;    // in [0, 100]
  std::map<int, double> per_class_f1;
  int clips = 0;
};

// Counts pooled per class across clips; Edit is the mean of per-clip scores.
// Throws ConfigError on an empty set.
Report aggregate(std::span<const ClipResult> results);

// Scores predictions against the labels of `clips`. Clips without a
// prediction entry count as empty predictions.
Report evaluate(const std::map<std::string, EventSequence>& predictions,
                std::span<const data::KeypointClip> clips, int tolerance);

// Mean pooled F1 of random placements: per clip, as many distinct random
// frames as it has events, classes drawn from the eval set's class frequencies.
double chance_f1(std::span<const data::KeypointClip> clips, int tolerance, int draws,
                 std::uint64_t seed);

}  // namespace umeg::metrics
