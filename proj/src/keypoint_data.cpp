#include "umeg/keypoint_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "umeg/errors.hpp"

namespace umeg::data {

using nlohmann::json;
namespace fs = std::filesystem;

void EntityLayout::validate() const {
  if (num_persons < 1) throw ValidationError("layout: num_persons must be >= 1");
  if (joints_per_person < 1) {
    throw ValidationError("layout: joints_per_person must be >= 1");
  }
  if (num_court_points != 0 && num_court_points != 4) {
    throw ValidationError("layout: num_court_points must be 0 or 4");
  }
}

void validate_clip(const KeypointClip& clip) {
  const std::string where = "clip '" + clip.clip_id + "'";
  clip.layout.validate();
  if (clip.frames.empty()) throw ValidationError(where + ": no frames");
  if (clip.num_classes < 1) throw ValidationError(where + ": num_classes < 1");
  const std::size_t nodes = static_cast<std::size_t>(clip.layout.node_count());
  for (std::size_t t = 0; t < clip.frames.size(); ++t) {
    const KeypointFrame& f = clip.frames[t];
    const std::string at = where + " frame " + std::to_string(t);
    if (f.points.size() != nodes) {
      throw ValidationError(at + ": expected " + std::to_string(nodes) +
                            " nodes, got " + std::to_string(f.points.size()));
    }
    if (f.detected.size() != nodes) {
      throw ValidationError(at + ": detection mask has " +
                            std::to_string(f.detected.size()) +
                            " entries, expected " + std::to_string(nodes));
    }
    for (std::size_t v = 0; v < nodes; ++v) {
      const Point& p = f.points[v];
      if (!f.detected[v]) {
        if (p.x != 0.0 || p.y != 0.0) {
          throw ValidationError(at + ": undetected node " + std::to_string(v) +
                                " has non-zero coordinates");
        }
      } else if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
        throw ValidationError(at + ": node " + std::to_string(v) +
                              " lies outside the normalized range [0,1]");
      }
    }
  }
  int prev = -1;
  for (const EventLabel& l : clip.labels) {
    if (l.frame < 0 || l.frame >= clip.length()) {
      throw ValidationError(where + ": label frame " + std::to_string(l.frame) +
                            " outside clip");
    }
    if (l.class_id < 0 || l.class_id >= clip.num_classes) {
      throw ValidationError(where + ": label class " +
                            std::to_string(l.class_id) + " out of range");
    }
    if (l.frame <= prev) {
      throw ValidationError(where + ": more than one event at frame " +
                            std::to_string(l.frame));
    }
    prev = l.frame;
  }
}

namespace {

[[noreturn]] void parse_fail(std::string_view source, std::size_t line,
                             const std::string& what) {
  throw ParseError(std::string(source) + ":" + std::to_string(line) + ": " +
                   what);
}

json parse_line(const std::string& text, std::string_view source,
                std::size_t line) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    parse_fail(source, line, std::string("malformed record: ") + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, std::string_view source,
        std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) parse_fail(source, line, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    parse_fail(source, line, std::string("bad field '") + key + "': " + e.what());
  }
}

}  // namespace

KeypointClip read_clip(std::istream& in, std::string_view source) {
  KeypointClip clip;
  std::string text;
  std::size_t line = 0;
  if (!std::getline(in, text)) parse_fail(source, 1, "empty clip file");
  ++line;
  const json header = parse_line(text, source, line);
  clip.clip_id = field<std::string>(header, "clip_id", source, line);
  const int length = field<int>(header, "T_clip", source, line);
  clip.layout.num_persons = field<int>(header, "N", source, line);
  clip.layout.joints_per_person = field<int>(header, "K", source, line);
  clip.layout.has_ball = field<bool>(header, "has_ball", source, line);
  clip.layout.num_court_points = field<int>(header, "num_court_points", source, line);
  clip.fps = field<double>(header, "fps", source, line);
  clip.num_classes = header.contains("num_classes")
                         ? field<int>(header, "num_classes", source, line)
                         : kSynthClasses;
  if (length < 1) parse_fail(source, line, "T_clip must be positive");
  try {
    clip.layout.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("clip '" + clip.clip_id + "': " + e.what());
  }

  clip.frames.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    if (!std::getline(in, text)) {
      parse_fail(source, line + 1, "clip '" + clip.clip_id + "' ends after " +
                                       std::to_string(t) + " of " +
                                       std::to_string(length) + " frames");
    }
    ++line;
    const json rec = parse_line(text, source, line);
    const int index = field<int>(rec, "frame", source, line);
    if (index != t) {
      parse_fail(source, line, "expected frame " + std::to_string(t) +
                                   ", found " + std::to_string(index));
    }
    const auto coords = field<std::vector<double>>(rec, "coords", source, line);
    const auto mask = field<std::string>(rec, "mask", source, line);
    if (coords.size() % 2 != 0) {
      parse_fail(source, line, "odd number of coordinates");
    }
    KeypointFrame f;
    f.points.resize(coords.size() / 2);
    for (std::size_t v = 0; v < f.points.size(); ++v) {
      f.points[v] = {coords[2 * v], coords[2 * v + 1]};
    }
    f.detected.resize(mask.size());
    for (std::size_t v = 0; v < mask.size(); ++v) {
      if (mask[v] != '0' && mask[v] != '1') {
        parse_fail(source, line, "mask must contain only '0' and '1'");
      }
      f.detected[v] = mask[v] == '1' ? 1 : 0;
    }
    clip.frames.push_back(std::move(f));
  }

  if (!std::getline(in, text)) parse_fail(source, line + 1, "missing label record");
  ++line;
  const json labels = parse_line(text, source, line);
  const auto pairs = field<std::vector<std::array<int, 2>>>(labels, "labels", source, line);
  for (const auto& [c, f] : pairs) clip.labels.push_back({c, f});
  std::stable_sort(clip.labels.begin(), clip.labels.end(),
                   [](const EventLabel& a, const EventLabel& b) {
                     return a.frame < b.frame;
                   });
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") != std::string::npos) {
      parse_fail(source, line, "unexpected content after label record");
    }
  }
  validate_clip(clip);
  return clip;
}

void write_clip(std::ostream& out, const KeypointClip& clip) {
  json header;
  header["clip_id"] = clip.clip_id;
  header["T_clip"] = clip.length();
  header["N"] = clip.layout.num_persons;
  header["K"] = clip.layout.joints_per_person;
  header["has_ball"] = clip.layout.has_ball;
  header["num_court_points"] = clip.layout.num_court_points;
  header["fps"] = clip.fps;
  header["num_classes"] = clip.num_classes;
  out << header.dump() << '\n';
  for (int t = 0; t < clip.length(); ++t) {
    const KeypointFrame& f = clip.frames[static_cast<std::size_t>(t)];
    json rec;
    rec["frame"] = t;
    std::vector<double> coords;
    coords.reserve(2 * f.points.size());
    for (const Point& p : f.points) {
      coords.push_back(p.x);
      coords.push_back(p.y);
    }
    rec["coords"] = coords;
    std::string mask(f.detected.size(), '0');
    for (std::size_t v = 0; v < f.detected.size(); ++v) {
      if (f.detected[v]) mask[v] = '1';
    }
    rec["mask"] = mask;
    out << rec.dump() << '\n';
  }
  json labels;
  labels["labels"] = json::array();
  for (const EventLabel& l : clip.labels) {
    labels["labels"].push_back({l.class_id, l.frame});
  }
  out << labels.dump() << '\n';
}

std::vector<KeypointClip> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw ParseError("dataset directory not found: " + dir.string());
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<KeypointClip> clips;
  clips.reserve(files.size());
  std::set<std::string> seen;
  for (const fs::path& p : files) {
    std::ifstream in(p);
    if (!in) throw ParseError("cannot open " + p.string());
    clips.push_back(read_clip(in, p.filename().string()));
    if (!seen.insert(clips.back().clip_id).second) {
      throw ValidationError("duplicate clip id '" + clips.back().clip_id + "'");
    }
  }
  return clips;
}

void save_dataset(const fs::path& dir, std::span<const KeypointClip> clips) {
  fs::create_directories(dir);
  for (const KeypointClip& clip : clips) {
    std::ofstream out(dir / (clip.clip_id + ".jsonl"), std::ios::binary);
    if (!out) throw std::runtime_error("cannot write clip " + clip.clip_id);
    write_clip(out, clip);
  }
}

KeypointClip strip_labels(const KeypointClip& clip) {
  KeypointClip c;
  c.clip_id = clip.clip_id;
  c.fps = clip.fps;
  c.num_classes = clip.num_classes;
  c.layout = clip.layout;
  c.frames = clip.frames;
  return c;
}

FewShotSplit make_split(std::span<const KeypointClip> clips, int k,
                        std::uint64_t seed, double eval_fraction) {
  if (k < 1) throw ConfigError("split: k must be >= 1");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("split: eval_fraction must be in [0, 1)");
  }
  std::vector<std::string> ids;
  ids.reserve(clips.size());
  for (const KeypointClip& c : clips) ids.push_back(c.clip_id);
  std::sort(ids.begin(), ids.end());
  const std::size_t n = ids.size();
  const auto n_eval = static_cast<std::size_t>(
      std::ceil(eval_fraction * static_cast<double>(n) - 1e-9));
  if (static_cast<std::size_t>(k) + n_eval > n) {
    throw CapacityError("split: k=" + std::to_string(k) + " plus " +
                        std::to_string(n_eval) + " eval clips exceeds pool of " +
                        std::to_string(n));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  FewShotSplit s;
  s.seed = seed;
  s.k = k;
  s.eval_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_eval));
  s.labeled_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_eval),
                       ids.begin() + static_cast<std::ptrdiff_t>(n_eval + k));
  s.unlabeled_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_eval + k), ids.end());
  return s;
}

std::vector<KeypointClip> select_clips(std::span<const KeypointClip> clips,
                                       std::span<const std::string> ids) {
  std::unordered_map<std::string, const KeypointClip*> by_id;
  for (const KeypointClip& c : clips) by_id.emplace(c.clip_id, &c);
  std::vector<KeypointClip> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ValidationError("unknown clip id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic rallies

void SynthConfig::validate() const {
  if (num_clips < 1) throw ConfigError("synth: num_clips must be >= 1");
  try {
    layout.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("synth: ") + e.what());
  }
  if (layout.num_persons < 2) throw ConfigError("synth: a rally needs two persons");
  if (layout.joints_per_person != coco::kNumJoints) {
    throw ConfigError("synth: persons must use the 17-joint COCO skeleton");
  }
  if (!layout.has_ball) throw ConfigError("synth: a rally needs a ball");
  if (gap_min < 8 || gap_min > gap_max) {
    throw ConfigError("synth: contact gap must satisfy 8 <= gap_min <= gap_max");
  }
  if (gap_max + 2 > frames_per_clip) {
    throw ConfigError("synth: event rate incompatible with clip length (gap_max=" +
                      std::to_string(gap_max) + ", T_clip=" +
                      std::to_string(frames_per_clip) + ")");
  }
  if (noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
  if (!(missing_prob >= 0.0 && missing_prob < 1.0)) {
    throw ConfigError("synth: missing_prob must be in [0, 1)");
  }
  if (!(speed_threshold > 0.0)) throw ConfigError("synth: speed_threshold must be > 0");
}

namespace {

// Joint offsets from the hip centre, in normalized image units (y down).
constexpr std::array<Point, coco::kNumJoints> kBodyTemplate = {{
    {0.000, -0.160},  // nose
    {-0.010, -0.170}, {0.010, -0.170},  // eyes
    {-0.020, -0.165}, {0.020, -0.165},  // ears
    {-0.040, -0.120}, {0.040, -0.120},  // shoulders
    {-0.055, -0.070}, {0.055, -0.070},  // elbows
    {-0.060, -0.030}, {0.060, -0.030},  // wrists
    {-0.030, 0.000},  {0.030, 0.000},   // hips
    {-0.030, 0.060},  {0.030, 0.060},   // knees
    {-0.030, 0.120},  {0.030, 0.120},   // ankles
}};

constexpr int kSwingHalfWidth = 6;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

struct Body {
  Point home;
  Point amp;
  Point freq;
  Point phase;

  Point centre(double t) const {
    return {home.x + amp.x * std::sin(freq.x * t + phase.x),
            home.y + amp.y * std::sin(freq.y * t + phase.y)};
  }
  Point joint(int j, double t) const {
    const Point c = centre(t);
    return {c.x + kBodyTemplate[static_cast<std::size_t>(j)].x,
            c.y + kBodyTemplate[static_cast<std::size_t>(j)].y};
  }
};

struct Contact {
  int time = 0;
  int player = 0;
  int wrist = coco::kRightWrist;
  Point point;
  double arc = 0.1;  // apex height of the flight leaving this contact
};

Contact make_contact(int time, int player, const Body& body, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Contact c;
  c.time = time;
  c.player = player;
  c.wrist = u01(rng) < 0.5 ? coco::kLeftWrist : coco::kRightWrist;
  const double side = player == 0 ? 1.0 : -1.0;
  const bool high = u01(rng) < 0.5;
  const double dx = side * (0.07 + 0.03 * u01(rng));
  const double dy = high ? -0.10 + 0.08 * u01(rng) : 0.02 + 0.04 * u01(rng);
  const Point centre = body.centre(time);
  c.point = {clamp01(centre.x + dx), clamp01(centre.y + dy)};
  c.arc = 0.05 + 0.15 * u01(rng);
  return c;
}

Point ball_at(int t, const std::vector<Contact>& path) {
  // path is sorted by time and brackets every frame of the clip.
  auto it = std::upper_bound(path.begin(), path.end(), t,
                             [](int v, const Contact& c) { return v < c.time; });
  const Contact& a = *(it - 1);
  if (a.time == t) return a.point;
  const Contact& b = *it;
  const double u = static_cast<double>(t - a.time) / static_cast<double>(b.time - a.time);
  return {clamp01(a.point.x + (b.point.x - a.point.x) * u),
          clamp01(a.point.y + (b.point.y - a.point.y) * u - a.arc * 4.0 * u * (1.0 - u))};
}

KeypointClip synth_clip(const SynthConfig& cfg, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu),
                    static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> gap(cfg.gap_min, cfg.gap_max);
  const EntityLayout& layout = cfg.layout;
  const int length = cfg.frames_per_clip;

  std::vector<Body> bodies(static_cast<std::size_t>(layout.num_persons));
  for (int p = 0; p < layout.num_persons; ++p) {
    Body& b = bodies[static_cast<std::size_t>(p)];
    if (p < 2) {
      b.home = {p == 0 ? 0.25 : 0.75, 0.5 + 0.1 * (u01(rng) - 0.5)};
    } else {
      b.home = {0.35 + 0.3 * u01(rng), 0.25 + 0.1 * u01(rng)};
    }
    b.amp = {0.01 + 0.02 * u01(rng), 0.01 + 0.01 * u01(rng)};
    b.freq = {0.02 + 0.04 * u01(rng), 0.02 + 0.04 * u01(rng)};
    b.phase = {6.283185307179586 * u01(rng), 6.283185307179586 * u01(rng)};
  }

  std::array<Point, 4> court = {{{0.10, 0.15}, {0.90, 0.15}, {0.90, 0.85}, {0.10, 0.85}}};
  for (Point& c : court) {
    c.x += 0.04 * (u01(rng) - 0.5);
    c.y += 0.04 * (u01(rng) - 0.5);
  }

  // Contact times: first in [2, gap_max], then renewal gaps while t <= T-2.
  std::vector<int> times;
  {
    std::uniform_int_distribution<int> first(2, cfg.gap_max);
    int t = first(rng);
    while (t <= length - 2) {
      times.push_back(t);
      t += gap(rng);
    }
  }
  const int first_player = u01(rng) < 0.5 ? 0 : 1;
  std::vector<Contact> path;
  {
    const int g = std::max(gap(rng), times.front() + 1);
    const int p = 1 - first_player;
    path.push_back(make_contact(times.front() - g, p, bodies[static_cast<std::size_t>(p)], rng));
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    const int p = (first_player + static_cast<int>(i)) % 2;
    path.push_back(make_contact(times[i], p, bodies[static_cast<std::size_t>(p)], rng));
  }
  {
    const int last = times.back();
    const int g = std::max(gap(rng), length - last);
    const int p = 1 - path.back().player;
    path.push_back(make_contact(last + g, p, bodies[static_cast<std::size_t>(p)], rng));
  }

  KeypointClip clip;
  char id[32];
  std::snprintf(id, sizeof(id), "clip_%04d", index);
  clip.clip_id = id;
  clip.fps = cfg.fps;
  clip.num_classes = kSynthClasses;
  clip.layout = layout;
  const std::size_t nodes = static_cast<std::size_t>(layout.node_count());
  clip.frames.resize(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    KeypointFrame& f = clip.frames[static_cast<std::size_t>(t)];
    f.points.assign(nodes, Point{});
    f.detected.assign(nodes, 1);
    for (int p = 0; p < layout.num_persons; ++p) {
      const Body& body = bodies[static_cast<std::size_t>(p)];
      for (int j = 0; j < coco::kNumJoints; ++j) {
        f.points[static_cast<std::size_t>(layout.joint_node(p, j))] = body.joint(j, t);
      }
    }
    // Swings: the hitting wrist (and half-way the elbow) reaches for the
    // contact point, landing on it exactly at the contact frame.
    for (const Contact& c : path) {
      const int du = std::abs(t - c.time);
      if (du > kSwingHalfWidth) continue;
      const Body& body = bodies[static_cast<std::size_t>(c.player)];
      const Point rest_at_contact = body.joint(c.wrist, c.time);
      const Point reach{c.point.x - rest_at_contact.x, c.point.y - rest_at_contact.y};
      const double s = du == 0 ? 1.0 : 1.0 - static_cast<double>(du) / (kSwingHalfWidth + 1);
      const int elbow = c.wrist - 2;
      Point& w = f.points[static_cast<std::size_t>(layout.joint_node(c.player, c.wrist))];
      Point& e = f.points[static_cast<std::size_t>(layout.joint_node(c.player, elbow))];
      const Point rest = body.joint(c.wrist, t);
      w = du == 0 ? c.point : Point{rest.x + s * reach.x, rest.y + s * reach.y};
      const Point erest = body.joint(elbow, t);
      e = {erest.x + 0.5 * s * reach.x, erest.y + 0.5 * s * reach.y};
    }
    for (Point& p : f.points) p = {clamp01(p.x), clamp01(p.y)};
    f.points[static_cast<std::size_t>(layout.ball_node())] = ball_at(t, path);
    for (int c = 0; c < layout.num_court_points; ++c) {
      f.points[static_cast<std::size_t>(layout.court_node(c))] = court[static_cast<std::size_t>(c)];
    }
  }

  // Labels are read back from the emitted keypoints.
  for (std::size_t i = 1; i + 1 < path.size(); ++i) {
    const Contact& c = path[i];
    const KeypointFrame& f = clip.frames[static_cast<std::size_t>(c.time)];
    const Point hip_l = f.points[static_cast<std::size_t>(layout.joint_node(c.player, coco::kLeftHip))];
    const Point hip_r = f.points[static_cast<std::size_t>(layout.joint_node(c.player, coco::kRightHip))];
    const double hip_y = 0.5 * (hip_l.y + hip_r.y);
    const Point wrist = f.points[static_cast<std::size_t>(layout.joint_node(c.player, c.wrist))];
    const Point b0 = f.points[static_cast<std::size_t>(layout.ball_node())];
    const Point b1 = clip.frames[static_cast<std::size_t>(c.time + 1)]
                         .points[static_cast<std::size_t>(layout.ball_node())];
    const bool fast = std::abs(b1.x - b0.x) >= cfg.speed_threshold;
    clip.labels.push_back({synth_event_class(c.player, wrist.y < hip_y, fast), c.time});
  }

  // Detector imperfections are applied last so labels stay noise-free.
  if (cfg.noise_sigma > 0.0 || cfg.missing_prob > 0.0) {
    std::mt19937_64 noise_rng(rng());
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
    for (KeypointFrame& f : clip.frames) {
      for (std::size_t v = 0; v < nodes; ++v) {
        if (cfg.missing_prob > 0.0 && u01(noise_rng) < cfg.missing_prob) {
          f.points[v] = {0.0, 0.0};
          f.detected[v] = 0;
          continue;
        }
        if (cfg.noise_sigma > 0.0) {
          f.points[v].x = clamp01(f.points[v].x + noise(noise_rng));
          f.points[v].y = clamp01(f.points[v].y + noise(noise_rng));
        }
      }
    }
  }
  return clip;
}

}  // namespace

std::vector<KeypointClip> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<KeypointClip> clips;
  clips.reserve(static_cast<std::size_t>(cfg.num_clips));
  for (int i = 0; i < cfg.num_clips; ++i) clips.push_back(synth_clip(cfg, i));
  return clips;
}

}  // namespace umeg::data
