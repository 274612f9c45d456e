#pragma once

// The graph spotting model: topology + encoder + heads, with checkpoint I/O.

#include <filesystem>
#include <memory>

#include <json.hpp>

#include "umeg/event_head.hpp"
#include "umeg/graph_builder.hpp"
#include "umeg/umeg_net.hpp"

namespace umeg {

struct ModelConfig {
  data::EntityLayout layout;
  graph::SportProfile profile = graph::SportProfile::kRacket;
  graph::EntityConfig entities = graph::EntityConfig::kPoseBallCourt;
  net::BlockConfig blocks;
  int num_classes = data::kSynthClasses;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const ModelConfig& v);
void from_json(const nlohmann::json& j, ModelConfig& v);

class UmegModel : public head::SpottingModel {
 public:
  explicit UmegModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const graph::GraphTopology& topology() const { return *topology_; }
  std::shared_ptr<const graph::GraphTopology> topology_ptr() const { return topology_; }
  net::UmegEncoder& encoder() { return encoder_; }
  const net::UmegEncoder& encoder() const { return encoder_; }
  head::SpottingHead& heads() { return head_; }
  int embedding_dim() const { return encoder_.output_dim(); }

  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Parameter*> trainable_parameters() override { return parameters(); }
  std::size_t parameter_count();

  // Per-frame embeddings for frames [start, start+length) of the clip,
  // zero-padded past its end.
  net::FrameEmbeddings embed(const data::KeypointClip& clip, int start, int length) const;

  head::FrameScores forward(const data::KeypointClip& clip, int start, int length,
                            bool record) override;
  void backward(const head::ScoreGrad& grad) override;

 private:
  ModelConfig cfg_;
  std::shared_ptr<const graph::GraphTopology> topology_;
  net::UmegEncoder encoder_;
  head::SpottingHead head_;
  net::UmegEncoder::Tape tape_;
  net::FrameEmbeddings last_emb_;
  bool recorded_ = false;
};

inline constexpr std::string_view kUmegKind = "umeg";

void save_model(const std::filesystem::path& path, UmegModel& model);
// Rebuilds the model from the stored config and loads its tensors.
std::unique_ptr<UmegModel> load_model(const std::filesystem::path& path);

}  // namespace umeg
