#include "umeg/graph_builder.hpp"

#include <cmath>
#include <sstream>

#include "umeg/errors.hpp"

namespace umeg::graph {

std::string_view to_string(SportProfile p) {
  switch (p) {
    case SportProfile::kRacket: return "racket";
    case SportProfile::kSoccer: return "soccer";
    case SportProfile::kSolo: return "solo";
  }
  return "?";
}

std::string_view to_string(EntityConfig c) {
  switch (c) {
    case EntityConfig::kPose: return "pose";
    case EntityConfig::kPoseBall: return "pose+ball";
    case EntityConfig::kPoseCourt: return "pose+court";
    case EntityConfig::kPoseBallCourt: return "pose+ball+court";
  }
  return "?";
}

std::string_view to_string(EdgeFamily f) {
  switch (f) {
    case EdgeFamily::kIntra: return "intra";
    case EdgeFamily::kPersonBall: return "person-ball";
    case EdgeFamily::kPersonCourt: return "person-court";
    case EdgeFamily::kCourtCourt: return "court-court";
  }
  return "?";
}

SportProfile parse_profile(std::string_view s) {
  if (s == "racket") return SportProfile::kRacket;
  if (s == "soccer") return SportProfile::kSoccer;
  if (s == "solo") return SportProfile::kSolo;
  throw ConfigError("unknown sport profile '" + std::string(s) + "'");
}

EntityConfig parse_entity_config(std::string_view s) {
  if (s == "pose") return EntityConfig::kPose;
  if (s == "pose+ball") return EntityConfig::kPoseBall;
  if (s == "pose+court") return EntityConfig::kPoseCourt;
  if (s == "pose+ball+court") return EntityConfig::kPoseBallCourt;
  throw ConfigError("unknown entity config '" + std::string(s) + "'");
}

bool includes_ball(EntityConfig c) {
  return c == EntityConfig::kPoseBall || c == EntityConfig::kPoseBallCourt;
}

bool includes_court(EntityConfig c) {
  return c == EntityConfig::kPoseCourt || c == EntityConfig::kPoseBallCourt;
}

const std::vector<std::pair<int, int>>& coco_bones() {
  static const std::vector<std::pair<int, int>> bones = {
      {15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 5}, {12, 6},
      {9, 7},   {7, 5},   {10, 8},  {8, 6},   {5, 0},  {6, 0},
      {1, 0},   {3, 1},   {2, 0},   {4, 2}};
  return bones;
}

std::map<EdgeFamily, int> GraphTopology::census() const {
  std::map<EdgeFamily, int> counts = {{EdgeFamily::kIntra, 0},
                                      {EdgeFamily::kPersonBall, 0},
                                      {EdgeFamily::kPersonCourt, 0},
                                      {EdgeFamily::kCourtCourt, 0}};
  for (const Edge& e : edges) ++counts[e.family];
  return counts;
}

GraphTopology build_topology(const data::EntityLayout& layout,
                             SportProfile profile, EntityConfig entity_config) {
  try {
    layout.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  if (layout.joints_per_person != data::coco::kNumJoints) {
    throw ConfigError("graph: person skeleton must have 17 COCO joints, layout has " +
                      std::to_string(layout.joints_per_person));
  }
  const bool ball = includes_ball(entity_config);
  const bool court = includes_court(entity_config);
  if (ball && !layout.has_ball) {
    throw ConfigError("graph: entity config '" + std::string(to_string(entity_config)) +
                      "' needs a ball but the layout has none");
  }
  if (court && layout.num_court_points != 4) {
    throw ConfigError("graph: entity config '" + std::string(to_string(entity_config)) +
                      "' needs 4 court corners but the layout has " +
                      std::to_string(layout.num_court_points));
  }

  GraphTopology g;
  g.layout = layout;
  g.profile = profile;
  g.entity_config = entity_config;
  const int persons = layout.num_persons;
  const int joints = layout.joints_per_person;
  for (int v = 0; v < persons * joints; ++v) g.source_node.push_back(v);
  int ball_node = -1;
  if (ball) {
    ball_node = static_cast<int>(g.source_node.size());
    g.source_node.push_back(layout.ball_node());
  }
  int court_base = -1;
  if (court) {
    court_base = static_cast<int>(g.source_node.size());
    for (int c = 0; c < 4; ++c) g.source_node.push_back(layout.court_node(c));
  }
  g.node_count = static_cast<int>(g.source_node.size());

  for (int p = 0; p < persons; ++p) {
    for (const auto& [a, b] : coco_bones()) {
      g.edges.push_back({p * joints + a, p * joints + b, EdgeFamily::kIntra});
    }
  }
  if (ball) {
    std::vector<int> contact_joints;
    if (profile == SportProfile::kSoccer) {
      contact_joints = {data::coco::kLeftAnkle, data::coco::kRightAnkle,
                        data::coco::kLeftShoulder, data::coco::kRightShoulder};
    } else {
      contact_joints = {data::coco::kLeftWrist, data::coco::kRightWrist};
    }
    for (int p = 0; p < persons; ++p) {
      for (int j : contact_joints) {
        g.edges.push_back({p * joints + j, ball_node, EdgeFamily::kPersonBall});
      }
    }
  }
  if (court) {
    for (int p = 0; p < persons; ++p) {
      for (int j : {data::coco::kLeftAnkle, data::coco::kRightAnkle}) {
        for (int c = 0; c < 4; ++c) {
          g.edges.push_back({p * joints + j, court_base + c, EdgeFamily::kPersonCourt});
        }
      }
    }
    for (int c = 0; c < 4; ++c) {
      g.edges.push_back({court_base + c, court_base + (c + 1) % 4, EdgeFamily::kCourtCourt});
    }
  }

  const auto n = static_cast<std::size_t>(g.node_count);
  g.adjacency = nn::Matrix(n, n);
  for (std::size_t v = 0; v < n; ++v) g.adjacency(v, v) = 1.0;
  for (const Edge& e : g.edges) {
    g.adjacency(static_cast<std::size_t>(e.a), static_cast<std::size_t>(e.b)) = 1.0;
    g.adjacency(static_cast<std::size_t>(e.b), static_cast<std::size_t>(e.a)) = 1.0;
  }
  return g;
}

nn::Matrix normalize_adjacency(const nn::Matrix& a) {
  require(a.rows == a.cols, "normalize_adjacency: matrix must be square");
  const std::size_t n = a.rows;
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a(i, j);
    require(deg > 0.0, "normalize_adjacency: node without self-loop");
    inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  nn::Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = inv_sqrt[i] * a(i, j) * inv_sqrt[j];
  }
  return out;
}

nn::Matrix normalize_adjacency(const GraphTopology& topology) {
  return normalize_adjacency(topology.adjacency);
}

GraphSequence GraphSequence::window(int start, int length) const {
  require(start >= 0 && length >= 1, "GraphSequence::window: bad range");
  GraphSequence w;
  w.frames = length;
  w.nodes = nodes;
  w.topology = topology;
  const std::size_t frame_size = static_cast<std::size_t>(nodes) * 2;
  w.coords.assign(static_cast<std::size_t>(length) * frame_size, 0.0);
  const int avail = std::max(0, std::min(length, frames - start));
  std::copy(coords.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(start) * frame_size),
            coords.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(start + avail) * frame_size),
            w.coords.begin());
  return w;
}

GraphSequence build_sequence(const data::KeypointClip& clip,
                             std::shared_ptr<const GraphTopology> topology) {
  require(topology != nullptr, "build_sequence: null topology");
  if (!(clip.layout == topology->layout)) {
    throw ValidationError("clip '" + clip.clip_id +
                          "': layout does not match the graph topology");
  }
  GraphSequence s;
  s.frames = clip.length();
  s.nodes = topology->node_count;
  s.coords.assign(static_cast<std::size_t>(s.frames) * s.nodes * 2, 0.0);
  for (int t = 0; t < s.frames; ++t) {
    const data::KeypointFrame& f = clip.frames[static_cast<std::size_t>(t)];
    double* row = s.coords.data() + static_cast<std::size_t>(t) * s.nodes * 2;
    for (int v = 0; v < s.nodes; ++v) {
      const auto src = static_cast<std::size_t>(topology->source_node[static_cast<std::size_t>(v)]);
      if (!f.detected[src]) continue;
      row[2 * v] = f.points[src].x;
      row[2 * v + 1] = f.points[src].y;
    }
  }
  s.topology = std::move(topology);
  return s;
}

std::string census_report(const GraphTopology& topology) {
  std::ostringstream out;
  out << "# profile=" << to_string(topology.profile)
      << " entities=" << to_string(topology.entity_config)
      << " nodes=" << topology.node_count << '\n';
  int total = 0;
  for (const auto& [family, count] : topology.census()) {
    out << to_string(family) << '\t' << count << '\n';
    total += count;
  }
  out << "total\t" << total << '\n';
  return out.str();
}

}  // namespace umeg::graph
