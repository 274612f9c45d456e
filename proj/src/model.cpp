#include "umeg/model.hpp"

#include "umeg/checkpoint.hpp"
#include "umeg/config_json.hpp"
#include "umeg/errors.hpp"

namespace umeg {

using nlohmann::json;

void to_json(json& j, const ModelConfig& v) {
  j = {{"layout", v.layout},
       {"profile", std::string(graph::to_string(v.profile))},
       {"entities", std::string(graph::to_string(v.entities))},
       {"blocks", v.blocks},
       {"num_classes", v.num_classes},
       {"seed", v.seed}};
}

void from_json(const json& j, ModelConfig& v) {
  cfg::check_keys(j, {"layout", "profile", "entities", "blocks", "num_classes", "seed"}, "model");
  cfg::read_opt(j, "layout", v.layout);
  if (j.contains("profile")) v.profile = graph::parse_profile(j.at("profile").get<std::string>());
  if (j.contains("entities")) {
    v.entities = graph::parse_entity_config(j.at("entities").get<std::string>());
  }
  cfg::read_opt(j, "blocks", v.blocks);
  cfg::read_opt(j, "num_classes", v.num_classes);
  cfg::read_opt(j, "seed", v.seed);
}

namespace {

std::shared_ptr<const graph::GraphTopology> make_topology(const ModelConfig& cfg) {
  return std::make_shared<const graph::GraphTopology>(
      graph::build_topology(cfg.layout, cfg.profile, cfg.entities));
}

}  // namespace

UmegModel::UmegModel(const ModelConfig& cfg)
    : cfg_(cfg),
      topology_(make_topology(cfg)),
      encoder_(cfg.blocks, graph::normalize_adjacency(*topology_), cfg.seed) {
  if (cfg.num_classes < 1) throw ConfigError("model: num_classes must be >= 1");
  nn::Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  head_ = head::SpottingHead(encoder_.output_dim(), cfg.num_classes, rng);
}

std::vector<nn::Parameter*> UmegModel::parameters() {
  std::vector<nn::Parameter*> ps = encoder_.parameters();
  for (nn::Parameter* p : head_.parameters()) ps.push_back(p);
  return ps;
}

std::size_t UmegModel::parameter_count() {
  return nn::manifest_total(nn::manifest_of(parameters()));
}

net::FrameEmbeddings UmegModel::embed(const data::KeypointClip& clip, int start,
                                      int length) const {
  const graph::GraphSequence seq = graph::build_sequence(clip, topology_).window(start, length);
  return encoder_.forward(seq);
}

head::FrameScores UmegModel::forward(const data::KeypointClip& clip, int start, int length,
                                     bool record) {
  const graph::GraphSequence seq = graph::build_sequence(clip, topology_).window(start, length);
  if (record) {
    last_emb_ = encoder_.forward(seq, &tape_);
    recorded_ = true;
    return head_.forward(last_emb_);
  }
  return head_.forward(encoder_.forward(seq));
}

void UmegModel::backward(const head::ScoreGrad& grad) {
  require(recorded_, "UmegModel::backward without a recorded forward");
  net::FrameEmbeddings d_emb;
  head_.backward(last_emb_, grad, &d_emb);
  encoder_.backward(tape_, d_emb);
}

void save_model(const std::filesystem::path& path, UmegModel& model) {
  ckpt::save(path, ckpt::make_checkpoint(kUmegKind, json(model.config()), model.parameters()));
}

std::unique_ptr<UmegModel> load_model(const std::filesystem::path& path) {
  const json j = ckpt::read(path);
  ModelConfig cfg;
  try {
    cfg = j.at("config").get<ModelConfig>();
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path.string() + "': bad config: " + e.what());
  }
  auto model = std::make_unique<UmegModel>(cfg);
  ckpt::load_parameters(j, kUmegKind, model->parameters());
  return model;
}

}  // namespace umeg
