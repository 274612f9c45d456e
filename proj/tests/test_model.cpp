#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "umeg/checkpoint.hpp"
#include "umeg/errors.hpp"
#include "umeg/model.hpp"

using namespace umeg;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(std::uint64_t seed = 1) {
  ModelConfig m;
  m.blocks = net::BlockConfig::uniform(16, 2);
  m.seed = seed;
  return m;
}

std::vector<data::KeypointClip> clips(int n, int frames) {
  data::SynthConfig cfg;
  cfg.num_clips = n;
  cfg.frames_per_clip = frames;
  cfg.seed = 9;
  return data::generate_synthetic(cfg);
}

head::TrainConfig quick_train() {
  head::TrainConfig t;
  t.seq_len = 32;
  t.epochs = 2;
  t.batch_size = 2;
  t.warmup_steps = 1;
  t.lr = 3e-3;
  t.min_val_clips = 1;
  return t;
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("umeg_model_" + name); }

}  // namespace

TEST_CASE("checkpoint round trip preserves predictions") {
  UmegModel m(small_model());
  // Move off the zero-initialized refinement so it round-trips too.
  for (auto* p : m.parameters()) {
    for (double& v : p->value) v += 1e-3;
  }
  const auto data = clips(1, 60);
  const auto before = m.predict(data[0]);
  const fs::path p = tmp("rt.json");
  save_model(p, m);
  auto back = load_model(p);
  CHECK(nn::checksum(back->parameters()) == nn::checksum(m.parameters()));
  const auto after = back->predict(data[0]);
  CHECK(after.event_prob == before.event_prob);
  CHECK(after.class_logits == before.class_logits);
  fs::remove(p);
}

TEST_CASE("checkpoint mismatches are refused") {
  UmegModel m(small_model());
  const fs::path p = tmp("mm.json");
  save_model(p, m);
  const auto ck = ckpt::read(p);

  ModelConfig wider = small_model();
  wider.blocks = net::BlockConfig::uniform(32, 2);
  UmegModel w(wider);
  auto wp = w.parameters();
  CHECK_THROWS_AS(ckpt::load_parameters(ck, kUmegKind, wp), LoadError);

  ModelConfig deeper = small_model();
  deeper.blocks = net::BlockConfig::uniform(16, 3);
  UmegModel d(deeper);
  auto dp = d.parameters();
  CHECK_THROWS_AS(ckpt::load_parameters(ck, kUmegKind, dp), LoadError);

  auto mp = m.parameters();
  CHECK_THROWS_AS(ckpt::load_parameters(ck, "student", mp), LoadError);
  CHECK_NOTHROW(ckpt::load_parameters(ck, kUmegKind, mp));

  auto bad = ck;
  bad["version"] = 2;
  ckpt::save(p, bad);
  CHECK_THROWS_AS(load_model(p), LoadError);
  {
    std::ofstream out(p);
    out << "{ truncated";
  }
  CHECK_THROWS_AS(load_model(p), LoadError);
  fs::remove(p);
  CHECK_THROWS_AS(load_model(p), LoadError);
}

TEST_CASE("a small optimizer step lowers the loss") {
  UmegModel m(small_model(4));
  const auto data = clips(1, 64);
  auto params = m.parameters();
  auto loss_at = [&](head::ScoreGrad* g) {
    const auto s = m.forward(data[0], 0, 64, g != nullptr);
    return head::spotting_loss(s, data[0].labels, 64, 5.0, g).total();
  };
  nn::zero_grads(params);
  head::ScoreGrad g;
  const double before = loss_at(&g);
  m.backward(g);
  nn::AdamW opt(params, {0.9, 0.999, 1e-8, 0.0});
  opt.step(1e-5);
  const double after = loss_at(nullptr);
  CHECK(after < before);
}

TEST_CASE("training is reproducible for a fixed seed") {
  const auto data = clips(4, 64);
  auto run = [&] {
    UmegModel m(small_model(2));
    const auto r = head::train(m, data, quick_train());
    return std::make_pair(nn::checksum(m.parameters()), r.history.back().train_loss);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("training keeps the best validation epoch") {
  const auto data = clips(4, 64);
  UmegModel m(small_model(3));
  auto cfg = quick_train();
  cfg.epochs = 4;
  const auto r = head::train(m, data, cfg);
  REQUIRE(r.history.size() == 4);
  double best = 1e300;
  for (const auto& e : r.history) best = std::min(best, e.val_loss);
  CHECK(r.best_val_loss == best);
  CHECK(r.val_ids.size() == 1);
  CHECK(r.train_ids.size() == 3);
  const double restored = head::evaluate_loss(m, std::span(data).subspan(3), cfg);
  CHECK(restored == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("model config json round trip") {
  ModelConfig m = small_model(77);
  m.entities = graph::EntityConfig::kPose;
  m.blocks.deltas = {1};
  nlohmann::json j = m;
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(back.seed == 77);
  CHECK(back.entities == graph::EntityConfig::kPose);
  CHECK(back.blocks.deltas == std::vector<int>{1});
  CHECK(back.blocks.widths == m.blocks.widths);
  j["blocks"]["mystery"] = 1;
  CHECK_THROWS_AS(j.get<ModelConfig>(), ConfigError);
}
