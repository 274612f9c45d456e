#include "umeg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "umeg/checkpoint.hpp"
#include "umeg/config_json.hpp"
#include "umeg/errors.hpp"

namespace umeg::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

void RunConfig::validate() const {
  if (ks.empty()) throw ConfigError("run: ks must not be empty");
  for (int k : ks) {
    if (k < 1) throw ConfigError("run: every k must be >= 1");
  }
  if (seeds.empty()) throw ConfigError("run: seeds must not be empty");
  if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) {
    throw ConfigError("run: eval_fraction must be in [0, 1)");
  }
  if (tolerance < 0) throw ConfigError("run: tolerance must be >= 0");
  if (jobs < 1) throw ConfigError("run: jobs must be >= 1");
  graph.blocks.validate();
  train.validate(graph.blocks.max_delta());
  decode.validate();
  distill.validate();
  student.validate();
}

std::string RunConfig::method_label(bool distilled) const {
  if (!method.empty()) return method;
  if (distilled) return "student-distilled";
  if (model == ModelKind::kStudent) return "student-scratch";
  std::string s = "umeg[" + std::string(graph::to_string(graph.entities)) + ";d=";
  for (std::size_t i = 0; i < graph.blocks.deltas.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(graph.blocks.deltas[i]);
  }
  return s + "]";
}

void to_json(json& j, const RunConfig& v) {
  j = json{{"dataset", v.dataset.string()},
           {"output", v.output.string()},
           {"method", v.method},
           {"model", v.model == ModelKind::kUmeg ? "umeg" : "student"},
           {"graph", v.graph},
           {"student", v.student},
           {"train", v.train},
           {"decode", v.decode},
           {"distill", v.distill},
           {"synth", v.synth},
           {"ks", v.ks},
           {"seeds", v.seeds},
           {"eval_fraction", v.eval_fraction},
           {"tolerance", v.tolerance},
           {"teacher", v.teacher.string()},
           {"jobs", v.jobs}};
}

void from_json(const json& j, RunConfig& v) {
  cfg::check_keys(j, {"dataset", "output", "method", "model", "graph", "student", "train",
                      "decode", "distill", "synth", "ks", "seeds", "eval_fraction",
                      "tolerance", "teacher", "jobs"},
                  "run");
  std::string s;
  if (j.contains("dataset")) v.dataset = j["dataset"].get<std::string>();
  if (j.contains("output")) v.output = j["output"].get<std::string>();
  if (j.contains("teacher")) v.teacher = j["teacher"].get<std::string>();
  cfg::read_opt(j, "method", v.method);
  if (j.contains("model")) {
    s = j["model"].get<std::string>();
    if (s == "umeg") {
      v.model = ModelKind::kUmeg;
    } else if (s == "student") {
      v.model = ModelKind::kStudent;
    } else {
      throw ConfigError("run: model must be 'umeg' or 'student', got '" + s + "'");
    }
  }
  cfg::read_opt(j, "graph", v.graph);
  cfg::read_opt(j, "student", v.student);
  cfg::read_opt(j, "train", v.train);
  cfg::read_opt(j, "decode", v.decode);
  cfg::read_opt(j, "distill", v.distill);
  cfg::read_opt(j, "synth", v.synth);
  cfg::read_opt(j, "ks", v.ks);
  cfg::read_opt(j, "seeds", v.seeds);
  cfg::read_opt(j, "eval_fraction", v.eval_fraction);
  cfg::read_opt(j, "tolerance", v.tolerance);
  cfg::read_opt(j, "jobs", v.jobs);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  try {
    return j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key part");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  try {
    *node = json::parse(raw);
  } catch (const json::exception&) {
    *node = raw;
  }
}

fs::path resolve_output(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("UMEG_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

std::string run_name(int k, std::uint64_t seed) {
  return "k" + std::to_string(k) + "_seed" + std::to_string(seed);
}

void to_json(json& j, const RunReport& v) {
  json per_class = json::object();
  for (const auto& [c, f] : v.metrics.per_class_f1) per_class[std::to_string(c)] = f;
  j = json{{"method", v.method},
           {"k", v.k},
           {"seed", v.seed},
           {"tolerance", v.tolerance},
           {"f1_evt", v.metrics.f1_evt},
           {"edit", v.metrics.edit},
           {"per_class_f1", per_class},
           {"eval_clips", v.metrics.clips},
           {"best_epoch", v.best_epoch},
           {"best_val_loss", v.best_val_loss},
           {"extra", v.extra}};
}

void from_json(const json& j, RunReport& v) {
  v.method = j.at("method").get<std::string>();
  v.k = j.at("k").get<int>();
  v.seed = j.at("seed").get<std::uint64_t>();
  v.tolerance = j.at("tolerance").get<int>();
  v.metrics.f1_evt = j.at("f1_evt").get<double>();
  v.metrics.edit = j.at("edit").get<double>();
  v.metrics.per_class_f1.clear();
  for (const auto& [c, f] : j.at("per_class_f1").items()) {
    v.metrics.per_class_f1[std::stoi(c)] = f.get<double>();
  }
  v.metrics.clips = j.at("eval_clips").get<int>();
  v.best_epoch = j.value("best_epoch", 0);
  v.best_val_loss = j.value("best_val_loss", 0.0);
  v.extra = j.value("extra", json::object());
}

namespace {

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw LoadError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError(p.string() + ": " + e.what());
  }
}

json split_json(const data::FewShotSplit& s, double eval_fraction) {
  return json{{"k", s.k},
              {"seed", s.seed},
              {"eval_fraction", eval_fraction},
              {"labeled_ids", s.labeled_ids},
              {"unlabeled_ids", s.unlabeled_ids},
              {"eval_ids", s.eval_ids}};
}

std::map<std::string, head::EventSequence> predict_all(head::SpottingModel& model,
                                                       std::span<const data::KeypointClip> clips,
                                                       const head::DecodeConfig& decode) {
  std::map<std::string, head::EventSequence> out;
  for (const auto& c : clips) out[c.clip_id] = head::decode(model.predict(c), decode);
  return out;
}

void write_distill_history(const fs::path& p, const distill::DistillResult& r) {
  std::ofstream out(p);
  out << "epoch\ttrain_loss\tholdout_loss\tlr\n";
  for (const auto& e : r.history) {
    out << e.epoch << '\t' << std::setprecision(10) << e.train_loss << '\t' << e.holdout_loss
        << '\t' << e.lr << '\n';
  }
}

}  // namespace

RunReport run_one(const RunConfig& cfg, Mode mode, std::span<const data::KeypointClip> dataset,
                  int k, std::uint64_t seed, const fs::path& dir, std::ostream* log) {
  if (dataset.empty()) throw ConfigError("run: empty dataset");
  const data::FewShotSplit split = data::make_split(dataset, k, seed, cfg.eval_fraction);
  const auto labeled = data::select_clips(dataset, split.labeled_ids);
  const auto eval = data::select_clips(dataset, split.eval_ids);
  const int classes = dataset.front().num_classes;
  for (const auto& c : dataset) {
    if (!(c.layout == dataset.front().layout) || c.num_classes != classes) {
      throw ValidationError("clip '" + c.clip_id + "' disagrees with the dataset's layout or class count");
    }
  }

  head::TrainConfig tc = cfg.train;
  tc.seed = seed;
  const bool write = !dir.empty();
  if (write) {
    fs::create_directories(dir);
    RunConfig snap = cfg;
    snap.ks = {k};
    snap.seeds = {seed};
    snap.output = fs::absolute(dir);
    snap.dataset = fs::absolute(cfg.dataset);
    if (!cfg.teacher.empty()) snap.teacher = fs::absolute(cfg.teacher);
    snap.method = cfg.method_label(mode == Mode::kDistill);
    write_json(dir / "config.json", json(snap));
    write_json(dir / "split.json", split_json(split, cfg.eval_fraction));
  }

  RunReport rep;
  rep.method = cfg.method_label(mode == Mode::kDistill);
  rep.k = k;
  rep.seed = seed;
  rep.tolerance = cfg.tolerance;
  head::TrainResult tr;
  std::map<std::string, head::EventSequence> preds;

  if (mode == Mode::kTrain && cfg.model == ModelKind::kUmeg) {
    ModelConfig mc = cfg.graph;
    mc.layout = dataset.front().layout;
    mc.num_classes = classes;
    mc.seed = seed;
    UmegModel model(mc);
    tr = head::train(model, labeled, tc, log);
    preds = predict_all(model, eval, cfg.decode);
    if (write) save_model(dir / "checkpoint.json", model);
    rep.extra["parameters"] = model.parameter_count();
  } else {
    distill::StudentConfig sc = cfg.student;
    sc.seed = seed;
    sc.num_classes = classes;
    std::unique_ptr<UmegModel> teacher;
    if (mode == Mode::kDistill) {
      if (cfg.teacher.empty()) throw ConfigError("distill: no teacher directory configured");
      const fs::path tpath = cfg.teacher / run_name(k, seed) / "checkpoint.json";
      if (!fs::exists(tpath)) throw ConfigError("distill: missing teacher " + tpath.string());
      teacher = load_model(tpath);
      sc.embed_dim = teacher->embedding_dim();
    }
    distill::StudentModel student(sc);
    if (mode == Mode::kDistill) {
      std::vector<data::KeypointClip> pool = labeled;
      const auto unl = data::select_clips(dataset, split.unlabeled_ids);
      pool.insert(pool.end(), unl.begin(), unl.end());
      distill::DistillConfig dc = cfg.distill;
      dc.seed = seed;
      const auto teacher_sum = nn::checksum(teacher->parameters());
      const auto dres = distill::distill(*teacher, student, pool, dc, tc, log);
      const auto enc_sum = nn::checksum(student.encoder_parameters());
      tr = distill::finetune_student(student, labeled, dc, tc, log);
      rep.extra["distill_initial_loss"] = dres.initial_holdout_loss;
      rep.extra["distill_best_loss"] = dres.best_holdout_loss;
      rep.extra["distill_best_epoch"] = dres.best_epoch;
      rep.extra["teacher_checksum_before"] = hex(teacher_sum);
      rep.extra["teacher_checksum_after"] = hex(nn::checksum(teacher->parameters()));
      rep.extra["encoder_checksum_before_finetune"] = hex(enc_sum);
      rep.extra["encoder_checksum_after_finetune"] = hex(nn::checksum(student.encoder_parameters()));
      if (write) write_distill_history(dir / "distill_history.tsv", dres);
    } else {
      student.set_stage(distill::StudentStage::kFull);
      tr = head::train(student, labeled, tc, log);
    }
    preds = predict_all(student, eval, cfg.decode);
    if (write) distill::save_student(dir / "checkpoint.json", student);
    rep.extra["parameters"] = nn::manifest_total(nn::manifest_of(student.parameters()));
  }

  rep.metrics = metrics::evaluate(preds, eval, cfg.tolerance);
  rep.best_epoch = tr.best_epoch;
  rep.best_val_loss = tr.best_val_loss;
  if (write) {
    {
      std::ofstream out(dir / "predictions.jsonl");
      head::write_predictions(out, preds);
    }
    {
      std::ofstream out(dir / "history.tsv");
      head::write_history(out, tr.history);
    }
    write_json(dir / "report.json", json(rep));
  }
  return rep;
}

RunReport evaluate_run(const fs::path& dir) {
  const RunConfig cfg = load_run_config(dir / "config.json");
  const json split = read_json(dir / "split.json");
  const auto dataset = data::load_dataset(cfg.dataset);
  const auto eval_ids = split.at("eval_ids").get<std::vector<std::string>>();
  const auto eval = data::select_clips(dataset, eval_ids);
  const json ck = ckpt::read(dir / "checkpoint.json");
  const std::string kind = ck.at("kind").get<std::string>();
  std::map<std::string, head::EventSequence> preds;
  if (kind == kUmegKind) {
    auto model = load_model(dir / "checkpoint.json");
    preds = predict_all(*model, eval, cfg.decode);
  } else if (kind == distill::kStudentKind) {
    auto model = distill::load_student(dir / "checkpoint.json");
    preds = predict_all(*model, eval, cfg.decode);
  } else {
    throw LoadError("checkpoint kind '" + kind + "' is not evaluable");
  }
  RunReport rep;
  rep.method = cfg.method;
  rep.k = split.at("k").get<int>();
  rep.seed = split.at("seed").get<std::uint64_t>();
  rep.tolerance = cfg.tolerance;
  rep.metrics = metrics::evaluate(preds, eval, cfg.tolerance);
  return rep;
}

void to_json(json& j, const Summary& v) {
  j = json{{"method", v.method}, {"rows", json::array()}};
  for (const auto& r : v.rows) {
    j["rows"].push_back(
        {{"k", r.k}, {"mean_f1_evt", r.mean_f1}, {"mean_edit", r.mean_edit}, {"seeds", r.seeds}});
  }
}

void from_json(const json& j, Summary& v) {
  v.method = j.at("method").get<std::string>();
  v.rows.clear();
  for (const auto& r : j.at("rows")) {
    v.rows.push_back({r.at("k").get<int>(), r.at("mean_f1_evt").get<double>(),
                      r.at("mean_edit").get<double>(), r.at("seeds").get<int>()});
  }
}

Summary summarize(const std::string& method, std::span<const RunReport> reports) {
  std::map<int, SummaryRow> by_k;
  for (const auto& r : reports) {
    SummaryRow& row = by_k[r.k];
    row.k = r.k;
    row.mean_f1 += r.metrics.f1_evt;
    row.mean_edit += r.metrics.edit;
    ++row.seeds;
  }
  Summary s;
  s.method = method;
  for (auto& [k, row] : by_k) {
    row.mean_f1 /= row.seeds;
    row.mean_edit /= row.seeds;
    s.rows.push_back(row);
  }
  return s;
}

void write_table(std::ostream& out, std::span<const Summary> summaries) {
  out << "method\tk\tmean_f1_evt\tmean_edit\tseeds\n";
  for (const auto& s : summaries) {
    for (const auto& r : s.rows) {
      out << s.method << '\t' << r.k << '\t' << std::fixed << std::setprecision(4) << r.mean_f1
          << '\t' << std::setprecision(2) << r.mean_edit << '\t' << r.seeds << '\n';
      out.unsetf(std::ios::fixed);
    }
  }
}

SweepResult sweep(const RunConfig& cfg, Mode mode, std::ostream* log) {
  cfg.validate();
  const auto dataset = data::load_dataset(cfg.dataset);
  const fs::path out = cfg.output;
  fs::create_directories(out);

  struct Job {
    int k;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int k : cfg.ks) {
    for (std::uint64_t s : cfg.seeds) jobs.push_back({k, s});
  }
  std::vector<std::optional<RunReport>> done(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      const fs::path dir = out / run_name(job.k, job.seed);
      try {
        fs::create_directories(dir);
        std::ofstream run_log(dir / "train.log");
        done[i] = run_one(cfg, mode, dataset, job.k, job.seed, dir, &run_log);
        if (log) {
          std::lock_guard lock(mu);
          *log << run_name(job.k, job.seed) << "  F1@" << cfg.tolerance << " "
               << std::fixed << std::setprecision(4) << done[i]->metrics.f1_evt << "  Edit "
               << std::setprecision(2) << done[i]->metrics.edit << std::defaultfloat << '\n';
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
        if (log) {
          std::lock_guard lock(mu);
          *log << run_name(job.k, job.seed) << "  FAILED: " << e.what() << '\n';
        }
      }
    }
  };
  const int threads = std::min<int>(cfg.jobs, static_cast<int>(jobs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  SweepResult result;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (done[i]) {
      result.reports.push_back(*done[i]);
    } else {
      result.failures.push_back({jobs[i].k, jobs[i].seed, errors[i]});
    }
  }
  result.summary = summarize(cfg.method_label(mode == Mode::kDistill), result.reports);
  write_json(out / "summary.json", json(result.summary));
  std::ofstream table(out / "summary.tsv");
  write_table(table, std::span(&result.summary, 1));
  return result;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string svg_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      default: o += c;
    }
  }
  return o;
}

void line_plot(const fs::path& path, std::span<const Summary> summaries, const std::vector<int>& ks,
               bool f1, const std::string& title) {
  const double w = 640, h = 400, left = 60, right = 190, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  const double ymax = f1 ? 1.0 : 100.0;
  auto xpos = [&](std::size_t i) {
    return ks.size() == 1 ? left + pw / 2 : left + pw * static_cast<double>(i) / (ks.size() - 1);
  };
  auto ypos = [&](double v) { return top + ph * (1.0 - v / ymax); };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::fixed << std::setprecision(1);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << title << "</text>\n";
  for (int g = 0; g <= 5; ++g) {
    const double v = ymax * g / 5.0;
    const double y = ypos(v);
    out << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">"
        << std::setprecision(f1 ? 1 : 0) << v << std::setprecision(1) << "</text>\n";
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out << "<text x=\"" << xpos(i) << "\" y=\"" << top + ph + 20 << "\" text-anchor=\"middle\">"
        << ks[i] << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">k (labeled clips)</text>\n";
  out << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << (f1 ? "F1_evt" : "Edit") << "</text>\n";
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (std::size_t s = 0; s < summaries.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    std::ostringstream pts;
    pts << std::fixed << std::setprecision(1);
    for (std::size_t i = 0; i < summaries[s].rows.size(); ++i) {
      const auto& r = summaries[s].rows[i];
      pts << xpos(i) << ',' << ypos(f1 ? r.mean_f1 : r.mean_edit) << ' ';
    }
    out << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    for (std::size_t i = 0; i < summaries[s].rows.size(); ++i) {
      const auto& r = summaries[s].rows[i];
      out << "<circle cx=\"" << xpos(i) << "\" cy=\"" << ypos(f1 ? r.mean_f1 : r.mean_edit)
          << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = top + 10 + 20.0 * static_cast<double>(s);
    out << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 35
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">"
        << svg_escape(summaries[s].method) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void plot(std::span<const Summary> summaries, const fs::path& out_dir) {
  if (summaries.empty()) throw ConfigError("plot: no summaries given");
  auto ks_of = [](const Summary& s) {
    std::vector<int> ks;
    for (const auto& r : s.rows) ks.push_back(r.k);
    return ks;
  };
  const std::vector<int> ks = ks_of(summaries.front());
  std::string offenders;
  for (const auto& s : summaries) {
    if (ks_of(s) == ks) continue;
    offenders += "\n  " + s.method + ": k =";
    for (int k : ks_of(s)) offenders += " " + std::to_string(k);
  }
  if (!offenders.empty()) {
    std::string expect;
    for (int k : ks) expect += " " + std::to_string(k);
    throw ConfigError("plot: k values differ from " + summaries.front().method + " (k =" +
                      expect + "):" + offenders);
  }
  fs::create_directories(out_dir);
  line_plot(out_dir / "f1_vs_k.svg", summaries, ks, true, "F1_evt vs k");
  line_plot(out_dir / "edit_vs_k.svg", summaries, ks, false, "Edit vs k");
  std::ofstream table(out_dir / "table.tsv");
  write_table(table, summaries);
}

}  // namespace umeg::pipeline
