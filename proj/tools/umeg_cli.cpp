// umeg: command-line front end for synthesis, training, distillation,
// evaluation, ablation sweeps and plotting.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "umeg/errors.hpp"
#include "umeg/graph_builder.hpp"
#include "umeg/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace umeg;

namespace {

// Flags shared by every run-producing subcommand; each one becomes a config
// override so the file and the flags go through the same parser.
struct RunFlags {
  std::string config;
  std::string dataset, output, teacher, model, entity_config, profile, deltas, method;
  std::vector<int> ks, widths;
  std::vector<std::uint64_t> seeds;
  int epochs = -1, jobs = -1, max_windows = -1, batch = -1, tolerance = -1;
  double lr = -1;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("-c,--config", config, "run configuration (JSON)")->check(CLI::ExistingFile);
    app->add_option("--dataset", dataset, "dataset directory");
    app->add_option("-o,--output", output, "output directory");
    app->add_option("--k", ks, "labeled clip counts")->delimiter(',');
    app->add_option("--seeds", seeds, "split seeds")->delimiter(',');
    app->add_option("--model", model, "umeg or student");
    app->add_option("--entity-config", entity_config, "pose, pose+ball, pose+court, pose+ball+court");
    app->add_option("--profile", profile, "racket, soccer or solo");
    app->add_option("--deltas", deltas, "temporal shift offsets, e.g. 1,2,4");
    app->add_option("--widths", widths, "block widths, one per block")->delimiter(',');
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--batch-size", batch);
    app->add_option("--max-windows", max_windows, "random windows per clip per epoch (0 = all)");
    app->add_option("--tolerance", tolerance, "F1 tolerance in frames");
    app->add_option("--jobs", jobs, "runs executed in parallel");
    app->add_option("--method", method, "series label");
    app->add_option("--set", sets, "key.path=value override, repeatable");
  }

  json to_config() const {
    json j = config.empty() ? json(pipeline::RunConfig{}) : [&] {
      std::ifstream in(config);
      try {
        return json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config " + config + ": " + e.what());
      }
    }();
    auto set = [&](const std::string& a) { pipeline::apply_override(j, a); };
    auto str = [](const std::string& s) { return json(s).dump(); };
    if (!dataset.empty()) set("dataset=" + str(dataset));
    if (!output.empty()) set("output=" + str(output));
    if (!teacher.empty()) set("teacher=" + str(teacher));
    if (!model.empty()) set("model=" + str(model));
    if (!method.empty()) set("method=" + str(method));
    if (!entity_config.empty()) set("graph.entities=" + str(entity_config));
    if (!profile.empty()) set("graph.profile=" + str(profile));
    if (!deltas.empty()) set("graph.blocks.deltas=[" + deltas + "]");
    if (!widths.empty()) set("graph.blocks.widths=" + json(widths).dump());
    if (!ks.empty()) set("ks=" + json(ks).dump());
    if (!seeds.empty()) set("seeds=" + json(seeds).dump());
    if (epochs >= 0) set("train.epochs=" + std::to_string(epochs));
    if (lr > 0) set("train.lr=" + json(lr).dump());
    if (batch > 0) set("train.batch_size=" + std::to_string(batch));
    if (max_windows >= 0) set("train.max_windows_per_clip=" + std::to_string(max_windows));
    if (tolerance >= 0) set("tolerance=" + std::to_string(tolerance));
    if (jobs > 0) set("jobs=" + std::to_string(jobs));
    for (const auto& s : sets) set(s);
    return j;
  }

  pipeline::RunConfig resolve() const {
    pipeline::RunConfig cfg;
    try {
      cfg = to_config().get<pipeline::RunConfig>();
    } catch (const json::exception& e) {
      throw ConfigError(e.what());
    }
    cfg.output = pipeline::resolve_output(cfg.output);
    if (!fs::exists(cfg.dataset)) cfg.dataset = pipeline::resolve_output(cfg.dataset);
    if (!cfg.teacher.empty() && !fs::exists(cfg.teacher)) {
      cfg.teacher = pipeline::resolve_output(cfg.teacher);
    }
    cfg.validate();
    return cfg;
  }
};

int report_sweep(const pipeline::SweepResult& r, const pipeline::RunConfig& cfg) {
  std::cout << "\n";
  pipeline::write_table(std::cout, std::span(&r.summary, 1));
  std::cout << "summary: " << (cfg.output / "summary.json").string() << "\n";
  if (r.failures.empty()) return 0;
  std::cerr << r.failures.size() << " run(s) failed:\n";
  for (const auto& f : r.failures) {
    std::cerr << "  k=" << f.k << " seed=" << f.seed << ": " << f.what << "\n";
  }
  return 1;
}

int cmd_synth(const RunFlags& flags, int clips, int frames, std::int64_t seed, double noise,
              double missing, bool force) {
  json j = flags.to_config();
  if (clips > 0) pipeline::apply_override(j, "synth.num_clips=" + std::to_string(clips));
  if (frames > 0) pipeline::apply_override(j, "synth.frames_per_clip=" + std::to_string(frames));
  if (seed >= 0) pipeline::apply_override(j, "synth.seed=" + std::to_string(seed));
  if (noise >= 0) pipeline::apply_override(j, "synth.noise_sigma=" + json(noise).dump());
  if (missing >= 0) pipeline::apply_override(j, "synth.missing_prob=" + json(missing).dump());
  const auto cfg = j.get<pipeline::RunConfig>();
  // Here --output names the dataset directory.
  const fs::path dir = pipeline::resolve_output(flags.output.empty() ? cfg.dataset : fs::path(flags.output));
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      std::cerr << "error: " << dir.string() << " exists and is not empty (use --force)\n";
      return 2;
    }
    fs::remove_all(dir);
  }
  const auto data = data::generate_synthetic(cfg.synth);
  data::save_dataset(dir, data);
  std::map<int, int> per_class;
  int events = 0;
  for (const auto& c : data) {
    for (const auto& l : c.labels) ++per_class[l.class_id];
    events += static_cast<int>(c.labels.size());
  }
  std::cout << "wrote " << data.size() << " clips to " << dir.string() << "\n";
  std::cout << "events " << events << " (" << std::fixed << std::setprecision(2)
            << static_cast<double>(events) / static_cast<double>(data.size()) << " per clip)\n";
  for (const auto& [c, n] : per_class) std::cout << "  class " << c << "\t" << n << "\n";
  return 0;
}

int cmd_eval(const std::vector<std::string>& runs, const std::string& sweep_dir) {
  std::vector<fs::path> dirs(runs.begin(), runs.end());
  if (!sweep_dir.empty()) {
    for (const auto& e : fs::directory_iterator(sweep_dir)) {
      if (e.is_directory() && fs::exists(e.path() / "checkpoint.json")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw ConfigError("eval: no run directories given");
  int failed = 0;
  for (const auto& d : dirs) {
    try {
      const auto rep = pipeline::evaluate_run(d);
      std::ofstream(d / "eval_report.json") << json(rep).dump(2) << "\n";
      std::cout << d.filename().string() << "  F1@" << rep.tolerance << " " << std::fixed
                << std::setprecision(4) << rep.metrics.f1_evt << "  Edit " << std::setprecision(2)
                << rep.metrics.edit;
      if (fs::exists(d / "report.json")) {
        std::ifstream in(d / "report.json");
        const auto saved = json::parse(in).get<pipeline::RunReport>();
        const double diff = std::max(std::abs(saved.metrics.f1_evt - rep.metrics.f1_evt),
                                     std::abs(saved.metrics.edit - rep.metrics.edit));
        std::cout << "  (max diff vs training report " << std::scientific << std::setprecision(1)
                  << diff << ")";
      }
      std::cout << std::defaultfloat << "\n";
    } catch (const std::exception& e) {
      std::cerr << d.string() << ": " << e.what() << "\n";
      ++failed;
    }
  }
  return failed ? 1 : 0;
}

int cmd_ablate(const RunFlags& flags, const std::vector<std::string>& entity_sets,
               const std::vector<std::string>& delta_sets, bool identity_shift) {
  const json base = flags.to_config();
  const pipeline::RunConfig base_cfg = flags.resolve();
  struct Variant {
    std::string name;
    std::string assignment;
  };
  std::vector<Variant> variants;
  for (const auto& e : entity_sets) variants.push_back({"entities=" + e, "graph.entities=" + json(e).dump()});
  for (const auto& d : delta_sets) variants.push_back({"deltas=" + d, "graph.blocks.deltas=[" + d + "]"});
  if (identity_shift) variants.push_back({"shift=identity", "graph.blocks.identity_shift=true"});
  if (variants.empty()) throw ConfigError("ablate: give --entity-configs, --delta-sets or --identity-shift");

  std::vector<pipeline::Summary> summaries;
  std::vector<std::string> failed;
  for (const auto& v : variants) {
    json j = base;
    pipeline::apply_override(j, v.assignment);
    pipeline::RunConfig cfg = j.get<pipeline::RunConfig>();
    cfg.output = base_cfg.output / v.name;
    cfg.dataset = base_cfg.dataset;
    cfg.method = v.name;
    cfg.validate();
    std::cout << "== " << v.name << "\n";
    const auto r = pipeline::sweep(cfg, pipeline::Mode::kTrain, &std::cout);
    summaries.push_back(r.summary);
    for (const auto& f : r.failures) {
      failed.push_back(v.name + " k=" + std::to_string(f.k) + " seed=" + std::to_string(f.seed) + ": " + f.what);
    }
  }
  fs::create_directories(base_cfg.output);
  {
    std::ofstream out(base_cfg.output / "ablation.tsv");
    pipeline::write_table(out, summaries);
  }
  std::cout << "\n";
  pipeline::write_table(std::cout, summaries);
  if (!failed.empty()) {
    std::cerr << failed.size() << " run(s) failed:\n";
    for (const auto& f : failed) std::cerr << "  " << f << "\n";
    return 1;
  }
  pipeline::plot(summaries, base_cfg.output);
  return 0;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out_dir) {
  std::vector<pipeline::Summary> summaries;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p /= "summary.json";
    std::ifstream f(p);
    if (!f) throw ConfigError("plot: cannot open " + p.string());
    summaries.push_back(json::parse(f).get<pipeline::Summary>());
  }
  const fs::path out = pipeline::resolve_output(out_dir);
  pipeline::plot(summaries, out);
  std::cout << "wrote " << (out / "f1_vs_k.svg").string() << ", " << (out / "edit_vs_k.svg").string()
            << ", " << (out / "table.tsv").string() << "\n";
  return 0;
}

int cmd_census(const RunFlags& flags) {
  const auto cfg = flags.to_config().get<pipeline::RunConfig>();
  const auto topo = graph::build_topology(cfg.graph.layout, cfg.graph.profile, cfg.graph.entities);
  std::cout << graph::census_report(topo);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"umeg: few-shot event spotting on multi-entity keypoint graphs"};
  app.require_subcommand(1);

  RunFlags synth_flags, train_flags, distill_flags, ablate_flags, census_flags;
  int clips = -1, frames = -1;
  std::int64_t synth_seed = -1;
  double noise = -1, missing = -1;
  bool force = false;
  auto* synth = app.add_subcommand("synth", "write a synthetic rally dataset");
  synth_flags.add(synth);
  synth->add_option("--clips", clips);
  synth->add_option("--frames", frames, "frames per clip");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--noise", noise, "coordinate noise sigma");
  synth->add_option("--missing", missing, "missing-detection probability");
  synth->add_flag("--force", force, "replace a non-empty output directory");

  auto* train = app.add_subcommand("train", "train over every (k, seed)");
  train_flags.add(train);

  auto* dist = app.add_subcommand("distill", "distill students from trained teachers, then fine-tune");
  distill_flags.add(dist);
  dist->add_option("--teacher", distill_flags.teacher, "train sweep directory with the teachers");

  std::vector<std::string> eval_runs;
  std::string eval_sweep;
  auto* eval = app.add_subcommand("eval", "re-score saved runs from their checkpoints");
  eval->add_option("--run", eval_runs, "run directory, repeatable");
  eval->add_option("--sweep", eval_sweep, "sweep directory; every run inside");

  std::vector<std::string> entity_sets, delta_sets;
  bool identity_shift = false;
  auto* ablate = app.add_subcommand("ablate", "one train sweep per variant plus a combined table");
  ablate_flags.add(ablate);
  ablate->add_option("--entity-configs", entity_sets)->delimiter(' ');
  ablate->add_option("--delta-sets", delta_sets, "e.g. --delta-sets 1 1,2,4");
  ablate->add_flag("--identity-shift", identity_shift, "add a variant without temporal shift");

  std::vector<std::string> plot_inputs;
  std::string plot_out = "plots";
  auto* plt = app.add_subcommand("plot", "F1/Edit vs k plots from sweep summaries");
  plt->add_option("inputs", plot_inputs, "summary.json files or sweep directories")->required();
  plt->add_option("-o,--output", plot_out);

  auto* census = app.add_subcommand("census", "edge census of the configured graph");
  census_flags.add(census);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(synth_flags, clips, frames, synth_seed, noise, missing, force);
    if (*train) {
      const auto cfg = train_flags.resolve();
      return report_sweep(pipeline::sweep(cfg, pipeline::Mode::kTrain, &std::cout), cfg);
    }
    if (*dist) {
      const auto cfg = distill_flags.resolve();
      if (cfg.teacher.empty()) throw ConfigError("distill: --teacher is required");
      if (!fs::is_directory(cfg.teacher)) {
        throw ConfigError("distill: teacher directory not found: " + cfg.teacher.string());
      }
      return report_sweep(pipeline::sweep(cfg, pipeline::Mode::kDistill, &std::cout), cfg);
    }
    if (*eval) return cmd_eval(eval_runs, eval_sweep);
    if (*ablate) return cmd_ablate(ablate_flags, entity_sets, delta_sets, identity_shift);
    if (*plt) return cmd_plot(plot_inputs, plot_out);
    if (*census) return cmd_census(census_flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
