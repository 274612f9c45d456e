#pragma once

// Keypoint clips: the data model, the line-delimited on-disk format, seeded
// few-shot splits, and a synthetic rally generator whose labels are a
// deterministic function of the keypoints it emits.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace umeg::data {

// COCO-17 joint indices used across the toolkit.
namespace coco {
inline constexpr int kNumJoints = 17;
inline constexpr int kLeftShoulder = 5;
inline constexpr int kRightShoulder = 6;
inline constexpr int kLeftWrist = 9;
inline constexpr int kRightWrist = 10;
inline constexpr int kLeftHip = 11;
inline constexpr int kRightHip = 12;
inline constexpr int kLeftAnkle = 15;
inline constexpr int kRightAnkle = 16;
}  // namespace coco

struct EntityLayout {
  int num_persons = 2;
  int joints_per_person = coco::kNumJoints;
  bool has_ball = true;
  int num_court_points = 4;

  // Throws ValidationError when N < 1, K < 1 or court points not in {0, 4}.
  void validate() const;

  int node_count() const {
    return num_persons * joints_per_person + (has_ball ? 1 : 0) +
           num_court_points;
  }
  // Canonical node order: persons by index, joints by index, ball, court.
  int joint_node(int person, int joint) const {
    return person * joints_per_person + joint;
  }
  int ball_node() const { return num_persons * joints_per_person; }
  int court_node(int corner) const {
    return num_persons * joints_per_person + (has_ball ? 1 : 0) + corner;
  }

  bool operator==(const EntityLayout&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

// One frame in canonical node order. Undetected nodes sit at exactly (0, 0).
struct KeypointFrame {
  std::vector<Point> points;
  std::vector<std::uint8_t> detected;
};

struct EventLabel {
  int class_id = 0;
  int frame = 0;
  bool operator==(const EventLabel&) const = default;
};

struct KeypointClip {
  std::string clip_id;
  double fps = 25.0;
  int num_classes = 8;
  EntityLayout layout;
  std::vector<KeypointFrame> frames;
  // Strictly increasing in frame.
  std::vector<EventLabel> labels;

  int length() const { return static_cast<int>(frames.size()); }
};

// Throws ValidationError naming the clip (and frame where relevant).
void validate_clip(const KeypointClip& clip);

// Parses one clip file. `source` is used in error messages. Labels are
// returned sorted by frame.
KeypointClip read_clip(std::istream& in, std::string_view source);
void write_clip(std::ostream& out, const KeypointClip& clip);

// One `<clip_id>.jsonl` file per clip, loaded in file-name order.
std::vector<KeypointClip> load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir,
                  std::span<const KeypointClip> clips);

// Returns a copy without any labels; the distillation stage only sees these.
KeypointClip strip_labels(const KeypointClip& clip);

struct FewShotSplit {
  std::vector<std::string> labeled_ids;
  std::vector<std::string> unlabeled_ids;
  std::vector<std::string> eval_ids;
  std::uint64_t seed = 0;
  int k = 0;
};

// Shuffles clip ids (sorted first, so input order does not matter) with
// `seed`; the first ceil(eval_fraction·n) become the eval set, the next k the
// labeled set, the rest the unlabeled pool. Smaller k at the same seed gives a
// prefix of the larger k's labeled set and the same eval set.
FewShotSplit make_split(std::span<const KeypointClip> clips, int k,
                        std::uint64_t seed, double eval_fraction);

// Clips from `clips` whose ids are listed, in list order. Throws
// ValidationError for unknown ids.
std::vector<KeypointClip> select_clips(std::span<const KeypointClip> clips,
                                       std::span<const std::string> ids);

struct SynthConfig {
  int num_clips = 100;
  int frames_per_clip = 300;
  EntityLayout layout;
  // Gap between consecutive contacts, uniform on [gap_min, gap_max] frames.
  int gap_min = 20;
  int gap_max = 40;
  double noise_sigma = 0.0;
  double missing_prob = 0.0;
  // Outgoing horizontal ball speed (normalized units per frame) at or above
  // which a contact counts as fast.
  double speed_threshold = 0.011;
  double fps = 25.0;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

inline constexpr int kSynthClasses = 8;

// Class of a contact: hitter (0/1) × wrist above hip × fast outgoing ball.
inline int synth_event_class(int player, bool wrist_above_hip, bool fast) {
  return player * 4 + (wrist_above_hip ? 2 : 0) + (fast ? 1 : 0);
}

// Simulated rallies: the ball flies between persons 0 and 1; at each contact
// the hitter's wrist and the ball share exactly the same coordinates, and the
// label is synth_event_class() evaluated on the emitted keypoints.
std::vector<KeypointClip> generate_synthetic(const SynthConfig& cfg);

}  // namespace umeg::data
