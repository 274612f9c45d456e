#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// runner: run configuration, per-(k, seed) runs with their artifact
// directories, sweep summaries and plots.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "umeg/distiller.hpp"
#include "umeg/keypoint_data.hpp"
#include "umeg/metrics.hpp"
#include "umeg/model.hpp"

namespace umeg::pipeline {

enum class ModelKind { kUmeg, kStudent };

struct RunConfig {
  std::filesystem::path dataset = "data/synth";
  std::filesystem::path output = "runs";
  // Series label in summaries and plots; derived from the model when empty.
  std::string method;
  ModelKind model = ModelKind::kUmeg;
  ModelConfig graph;
  distill::StudentConfig student;
  head::TrainConfig train;
  head::DecodeConfig decode;
  distill::DistillConfig distill;
  data::SynthConfig synth;
  std::vector<int> ks{15, 25, 50, 100};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double eval_fraction = 0.2;
  int tolerance = 1;
  // A train sweep directory holding k*_seed*/checkpoint.json teachers.
  std::filesystem::path teacher;
  int jobs = 1;

  // Throws ConfigError.
  void validate() const;
  std::string method_label(bool distilled) const;
};

void to_json(nlohmann::json& j, const RunConfig& v);
void from_json(const nlohmann::json& j, RunConfig& v);

RunConfig load_run_config(const std::filesystem::path& path);

// `key.path=value`; value parsed as JSON, or taken as a string when that
// fails. Throws ConfigError for a malformed assignment.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Relative paths are placed under $UMEG_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& p);

std::string run_name(int k, std::uint64_t seed);

struct RunReport {
  std::string method;
  int k = 0;
  std::uint64_t seed = 0;
  int tolerance = 1;
  metrics::Report metrics;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const RunReport& v);
void from_json(const nlohmann::json& j, RunReport& v);

enum class Mode { kTrain, kDistill };

// One few-shot run; writes its artifacts into `dir` when non-empty.
RunReport run_one(const RunConfig& cfg, Mode mode, std::span<const data::KeypointClip> dataset,
                  int k, std::uint64_t seed, const std::filesystem::path& dir,
                  std::ostream* log = nullptr);

// Re-scores a finished run directory from its checkpoint.
RunReport evaluate_run(const std::filesystem::path& dir);

struct SummaryRow {
  int k = 0;
  double mean_f1 = 0.0;
  double mean_edit = 0.0;
  int seeds = 0;
};

struct Summary {
  std::string method;
  std::vector<SummaryRow> rows;  // ascending k
};

void to_json(nlohmann::json& j, const Summary& v);
void from_json(const nlohmann::json& j, Summary& v);

Summary summarize(const std::string& method, std::span<const RunReport> reports);

struct Failure {
  int k = 0;
  std::uint64_t seed = 0;
  std::string what;
};

struct SweepResult {
  std::vector<RunReport> reports;
  std::vector<Failure> failures;
  Summary summary;
};

// Every (k, seed) of the config into cfg.output/run_name(k, seed), then
// summary.json and summary.tsv in cfg.output. Failing runs are collected,
// not rethrown.
SweepResult sweep(const RunConfig& cfg, Mode mode, std::ostream* log = nullptr);

// F1-vs-k and Edit-vs-k SVG plots plus table.tsv. Throws ConfigError when the
// summaries disagree on their k values.
void plot(std::span<const Summary> summaries, const std::filesystem::path& out_dir);

void write_table(std::ostream& out, std::span<const Summary> summaries);

}  // namespace umeg::pipeline
