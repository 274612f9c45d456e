#pragma once

// Unified multi-entity graph: one static topology over all persons' joints,
// the ball and the court corners, plus per-clip coordinate tensors laid out in
// the same node order.

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "umeg/keypoint_data.hpp"
#include "umeg/nn.hpp"

namespace umeg::graph {

enum class SportProfile { kRacket, kSoccer, kSolo };
enum class EntityConfig { kPose, kPoseBall, kPoseCourt, kPoseBallCourt };

enum class EdgeFamily { kIntra, kPersonBall, kPersonCourt, kCourtCourt };

std::string_view to_string(SportProfile p);
std::string_view to_string(EntityConfig c);
std::string_view to_string(EdgeFamily f);
// Throw ConfigError on unknown names.
SportProfile parse_profile(std::string_view s);
EntityConfig parse_entity_config(std::string_view s);

bool includes_ball(EntityConfig c);
bool includes_court(EntityConfig c);

// Undirected person skeleton, 16 bones over the COCO-17 joints.
const std::vector<std::pair<int, int>>& coco_bones();

struct Edge {
  int a = 0;
  int b = 0;
  EdgeFamily family = EdgeFamily::kIntra;
};

struct GraphTopology {
  data::EntityLayout layout;  // layout of the source clips
  SportProfile profile = SportProfile::kRacket;
  EntityConfig entity_config = EntityConfig::kPoseBallCourt;
  int node_count = 0;
  // Graph node -> node index in the source layout's canonical order.
  std::vector<int> source_node;
  std::vector<Edge> edges;
  // Edge indicator plus unit self-loops; symmetric.
  nn::Matrix adjacency;

  std::map<EdgeFamily, int> census() const;
};

GraphTopology build_topology(const data::EntityLayout& layout,
                             SportProfile profile, EntityConfig entity_config);

// D^{-1/2} Â D^{-1/2}, where Â is topology.adjacency (self-loops included)
// and D its degree matrix.
nn::Matrix normalize_adjacency(const GraphTopology& topology);
nn::Matrix normalize_adjacency(const nn::Matrix& adjacency_with_loops);

struct GraphSequence {
  int frames = 0;
  int nodes = 0;
  // frames × nodes × 2, row-major.
  std::vector<double> coords;
  std::shared_ptr<const GraphTopology> topology;

  double x(int t, int v) const { return coords[(static_cast<std::size_t>(t) * nodes + v) * 2]; }
  double y(int t, int v) const { return coords[(static_cast<std::size_t>(t) * nodes + v) * 2 + 1]; }

  // Frames [start, start+length); frames past the end are zero-filled.
  GraphSequence window(int start, int length) const;
};

GraphSequence build_sequence(const data::KeypointClip& clip,
                             std::shared_ptr<const GraphTopology> topology);

// Text dump "family<TAB>count" per family plus a total line.
std::string census_report(const GraphTopology& topology);

}  // namespace umeg::graph
