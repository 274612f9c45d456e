#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "umeg/errors.hpp"
#include "umeg/pipeline.hpp"

using namespace umeg;
using namespace umeg::pipeline;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

RunReport fake(int k, std::uint64_t seed, double f1, double edit) {
  RunReport r;
  r.method = "m";
  r.k = k;
  r.seed = seed;
  r.metrics.f1_evt = f1;
  r.metrics.edit = edit;
  return r;
}

RunConfig tiny_config(const fs::path& data) {
  RunConfig cfg;
  cfg.dataset = data;
  cfg.graph.blocks = net::BlockConfig::uniform(8, 2);
  cfg.train.seq_len = 48;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 2;
  cfg.train.max_windows_per_clip = 1;
  cfg.student.raster.height = 16;
  cfg.student.raster.width = 16;
  cfg.student.embed_dim = 8;
  cfg.distill.epochs = 1;
  cfg.distill.finetune_epochs = 1;
  cfg.distill.max_windows_per_clip = 1;
  return cfg;
}

std::vector<data::KeypointClip> tiny_data() {
  data::SynthConfig s;
  s.num_clips = 10;
  s.frames_per_clip = 96;
  s.seed = 4;
  return data::generate_synthetic(s);
}

}  // namespace

TEST_CASE("overrides edit nested keys") {
  json j = RunConfig{};
  apply_override(j, "train.epochs=7");
  apply_override(j, "graph.blocks.deltas=[1]");
  apply_override(j, "method=plain words");
  apply_override(j, "ks=[25,100]");
  const auto cfg = j.get<RunConfig>();
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.graph.blocks.deltas == std::vector<int>{1});
  CHECK(cfg.method == "plain words");
  CHECK(cfg.ks == std::vector<int>{25, 100});
  CHECK_THROWS_AS(apply_override(j, "noequals"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "train..epochs=1"), ConfigError);
  apply_override(j, "train.epoch=3");
  CHECK_THROWS_AS(j.get<RunConfig>(), ConfigError);
}

TEST_CASE("run config round trip and validation") {
  RunConfig cfg;
  cfg.model = ModelKind::kStudent;
  cfg.seeds = {3, 9};
  const RunConfig back = json(cfg).get<RunConfig>();
  CHECK(back.model == ModelKind::kStudent);
  CHECK(back.seeds == cfg.seeds);
  CHECK(json(back) == json(cfg));
  CHECK_NOTHROW(cfg.validate());
  cfg.ks.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.graph.blocks.deltas = {1, 2, 64};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  json j = RunConfig{};
  j["model"] = "resnet";
  CHECK_THROWS_AS(j.get<RunConfig>(), ConfigError);
}

TEST_CASE("method labels") {
  RunConfig cfg;
  CHECK(cfg.method_label(false) == "umeg[pose+ball+court;d=1,2,4]");
  CHECK(cfg.method_label(true) == "student-distilled");
  cfg.model = ModelKind::kStudent;
  CHECK(cfg.method_label(false) == "student-scratch");
  cfg.method = "mine";
  CHECK(cfg.method_label(true) == "mine");
}

TEST_CASE("summary averages per k") {
  std::vector<RunReport> reps;
  for (std::uint64_t s = 0; s < 5; ++s) {
    reps.push_back(fake(25, s, 0.1 * s, 10.0 * s));
    reps.push_back(fake(100, s, 0.5, 50.0));
  }
  CHECK(reps.size() == 10);
  const Summary sum = summarize("m", reps);
  REQUIRE(sum.rows.size() == 2);
  CHECK(sum.rows[0].k == 25);
  CHECK(sum.rows[0].mean_f1 == doctest::Approx(0.2));
  CHECK(sum.rows[0].mean_edit == doctest::Approx(20.0));
  CHECK(sum.rows[0].seeds == 5);
  CHECK(sum.rows[1].mean_f1 == doctest::Approx(0.5));
  const Summary back = json(sum).get<Summary>();
  CHECK(back.rows.size() == 2);
  CHECK(back.method == "m");

  std::ostringstream out;
  write_table(out, std::span(&sum, 1));
  std::string header;
  std::getline(std::istringstream(out.str()) >> std::ws, header);
  CHECK(header == "method\tk\tmean_f1_evt\tmean_edit\tseeds");
}

TEST_CASE("plots need a shared k axis") {
  std::vector<RunReport> a, b;
  for (int k : {15, 25, 50, 100}) {
    a.push_back(fake(k, 0, 0.3, 30));
    b.push_back(fake(k, 0, 0.4, 40));
  }
  std::vector<Summary> sums = {summarize("first", a), summarize("second", b)};
  const fs::path dir = fs::temp_directory_path() / "umeg_plot_test";
  fs::remove_all(dir);
  plot(sums, dir);
  CHECK(fs::exists(dir / "f1_vs_k.svg"));
  CHECK(fs::exists(dir / "edit_vs_k.svg"));
  std::ifstream svg(dir / "f1_vs_k.svg");
  std::stringstream s;
  s << svg.rdbuf();
  CHECK(s.str().find("second") != std::string::npos);
  std::size_t circles = 0;
  for (auto p = s.str().find("<circle"); p != std::string::npos; p = s.str().find("<circle", p + 1)) ++circles;
  CHECK(circles == 8);

  b.pop_back();
  sums.push_back(summarize("short", b));
  try {
    plot(sums, dir);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("short") != std::string::npos);
    CHECK(std::string(e.what()).find("second") == std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("output root from the environment") {
  ::setenv("UMEG_OUTPUT_ROOT", "/tmp/root_x", 1);
  CHECK(resolve_output("runs") == fs::path("/tmp/root_x/runs"));
  CHECK(resolve_output("/abs") == fs::path("/abs"));
  ::unsetenv("UMEG_OUTPUT_ROOT");
  CHECK(resolve_output("runs") == fs::path("runs"));
}

TEST_CASE("a run directory re-scores to the same report") {
  const fs::path root = fs::temp_directory_path() / "umeg_pipeline_run";
  fs::remove_all(root);
  const auto data = tiny_data();
  data::save_dataset(root / "data", data);
  RunConfig cfg = tiny_config(root / "data");
  const fs::path dir = root / run_name(4, 1);
  const RunReport rep = run_one(cfg, Mode::kTrain, data, 4, 1, dir);
  for (const char* f : {"config.json", "split.json", "checkpoint.json", "predictions.jsonl",
                        "report.json", "history.tsv"}) {
    CHECK(fs::exists(dir / f));
  }
  const RunReport again = evaluate_run(dir);
  CHECK(again.metrics.f1_evt == rep.metrics.f1_evt);
  CHECK(again.metrics.edit == rep.metrics.edit);
  CHECK(again.k == 4);

  // Distillation reads the teacher from the train directory.
  cfg.teacher = root;
  const RunReport d = run_one(cfg, Mode::kDistill, data, 4, 1, root / "dist");
  CHECK(d.extra.at("teacher_checksum_before") == d.extra.at("teacher_checksum_after"));
  CHECK(d.extra.at("encoder_checksum_before_finetune") == d.extra.at("encoder_checksum_after_finetune"));
  CHECK(evaluate_run(root / "dist").metrics.f1_evt == d.metrics.f1_evt);
  CHECK_THROWS_AS(run_one(cfg, Mode::kDistill, data, 5, 1, {}), ConfigError);
  cfg.teacher.clear();
  CHECK_THROWS_AS(run_one(cfg, Mode::kDistill, data, 4, 1, {}), ConfigError);
  fs::remove_all(root);
}

TEST_CASE("sweeps collect failures") {
  const fs::path root = fs::temp_directory_path() / "umeg_pipeline_sweep";
  fs::remove_all(root);
  data::save_dataset(root / "data", tiny_data());
  RunConfig cfg = tiny_config(root / "data");
  cfg.output = root / "out";
  cfg.ks = {3, 9};  // 9 + 2 eval clips exceed the pool of 10
  cfg.seeds = {0, 1};
  const SweepResult r = sweep(cfg, Mode::kTrain);
  CHECK(r.reports.size() == 2);
  REQUIRE(r.failures.size() == 2);
  CHECK(r.failures[0].k == 9);
  CHECK(fs::exists(root / "out" / "summary.json"));
  CHECK(r.summary.rows.size() == 1);
  fs::remove_all(root);
}
