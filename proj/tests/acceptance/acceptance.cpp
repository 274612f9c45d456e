// Acceptance runner: property checks on the network, metrics and distillation
// loss, directional learnability checks on synthetic rallies, and end-to-end
// reproducibility through the command-line tool. One PASS/FAIL line per
// criterion; exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "umeg/distiller.hpp"
#include "umeg/graph_builder.hpp"
#include "umeg/metrics.hpp"
#include "umeg/model.hpp"
#include "umeg/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace umeg;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

nn::Matrix six_node_adjacency() {
  nn::Matrix a(6, 6);
  for (std::size_t i = 0; i < 6; ++i) {
    a(i, i) = 1.0;
    a(i, (i + 1) % 6) = a((i + 1) % 6, i) = 1.0;
  }
  a(0, 3) = a(3, 0) = 1.0;
  return graph::normalize_adjacency(a);
}

graph::GraphSequence random_sequence(int frames, int nodes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  graph::GraphSequence s;
  s.frames = frames;
  s.nodes = nodes;
  s.coords.resize(static_cast<std::size_t>(frames) * nodes * 2);
  for (double& c : s.coords) c = u(rng);
  return s;
}

void jitter(std::span<nn::Parameter* const> params, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (nn::Parameter* p : params) {
    for (double& x : p->value) x += u(rng);
  }
}

// 1. Encoder + heads + spotting loss on a 6-node graph, every parameter.
Outcome gradient_fidelity() {
  const auto t0 = clk::now();
  net::BlockConfig cfg;
  cfg.widths = {8, 8};
  cfg.deltas = {1, 2};
  net::UmegEncoder enc(cfg, six_node_adjacency(), 5);
  nn::Rng rng(6);
  head::SpottingHead heads(8, 3, rng);
  std::vector<nn::Parameter*> params = enc.parameters();
  for (auto* p : heads.parameters()) params.push_back(p);
  // Off the zero-initialised refinement so its entries are exercised too.
  jitter(params, 7, 0.05);
  const int frames = 5;
  const graph::GraphSequence seq = random_sequence(frames, 6, 8);
  const head::EventSequence labels = {{1, 1}, {2, 3}};

  auto loss = [&] {
    return head::spotting_loss(heads.forward(enc.forward(seq)), labels, frames, 5.0).total();
  };
  auto analytic = [&] {
    net::UmegEncoder::Tape tape;
    const auto emb = enc.forward(seq, &tape);
    head::ScoreGrad g;
    head::spotting_loss(heads.forward(emb), labels, frames, 5.0, &g);
    net::FrameEmbeddings d_emb;
    heads.backward(emb, g, &d_emb);
    enc.backward(tape, d_emb);
  };
  const auto r = testing::grad_check(params, loss, analytic, 1e-5);
  std::size_t total = 0;
  for (auto* p : params) total += p->size();
  const double secs = seconds_since(t0);
  return {r.max_rel_error <= 1e-4 && secs <= 60.0,
          "max rel error " + sci(r.max_rel_error) + " over " + std::to_string(r.checked) + " of " +
              std::to_string(total) + " entries (worst " + r.worst + "), " + fmt(secs, 2) + " s"};
}

// 2. Manifests across shift fractions and with the shift replaced.
Outcome parameter_free_shift() {
  auto manifest = [](double alpha, bool identity) {
    ModelConfig m;
    m.blocks.shift_fraction = alpha;
    m.blocks.identity_shift = identity;
    UmegModel model(m);
    const auto man = nn::manifest_of(model.parameters());
    return std::make_pair(man, model.parameter_count() == nn::manifest_total(man));
  };
  const auto [base, base_ok] = manifest(0.125, false);
  bool same = base_ok;
  for (double a : {1.0 / 16, 0.25}) {
    const auto [m, ok] = manifest(a, false);
    same = same && ok && m == base;
  }
  const auto [ident, ident_ok] = manifest(0.125, true);
  same = same && ident_ok && ident == base;
  return {same, std::to_string(base.size()) + " tensors, " +
                    std::to_string(nn::manifest_total(base)) +
                    " parameters; alpha 1/16, 1/8, 1/4 and identity shift " +
                    (same ? "identical" : "DIFFER")};
}

// 3. Perturb one frame, count changes further than 4L frames away.
Outcome receptive_field() {
  net::BlockConfig cfg;
  cfg.widths = {16, 16, 16};
  cfg.deltas = {1, 2, 4};
  const int L = cfg.num_blocks();
  net::UmegEncoder enc(cfg, six_node_adjacency(), 11);
  jitter(enc.parameters(), 12, 0.05);
  const int frames = 64;
  std::mt19937_64 rng(13);
  int violations = 0, near_changes = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto seq = random_sequence(frames, 6, 100 + trial);
    const auto base = enc.forward(seq);
    const int t = std::uniform_int_distribution<int>(0, frames - 1)(rng);
    auto moved = seq;
    std::normal_distribution<double> n(0.0, 0.2);
    for (int v = 0; v < 6; ++v) {
      moved.coords[(static_cast<std::size_t>(t) * 6 + v) * 2] += n(rng);
      moved.coords[(static_cast<std::size_t>(t) * 6 + v) * 2 + 1] += n(rng);
    }
    const auto out = enc.forward(moved);
    for (int s = 0; s < frames; ++s) {
      bool diff = false;
      for (int c = 0; c < out.dim; ++c) diff |= out.row(s)[c] != base.row(s)[c];
      if (!diff) continue;
      if (std::abs(s - t) > 4 * L) ++violations;
      else ++near_changes;
    }
  }
  return {violations == 0 && near_changes > 0,
          std::to_string(violations) + " violations of |t'-t| <= " + std::to_string(4 * L) +
              " over 20 trials (" + std::to_string(near_changes) + " frames changed inside)"};
}

// 4. Metrics against the DP and exhaustive-matching oracles.
Outcome metric_oracles() {
  std::mt19937_64 rng(2024);
  int edit_bad = 0, f1_bad = 0, mono_bad = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const int classes = std::uniform_int_distribution<int>(1, 4)(rng);
    const int frames = std::uniform_int_distribution<int>(8, 60)(rng);
    auto make = [&] {
      std::map<int, int> by_frame;
      for (int c = 0; c < classes; ++c) {
        const int n = std::uniform_int_distribution<int>(0, 6)(rng);
        for (int i = 0; i < n; ++i) {
          by_frame[std::uniform_int_distribution<int>(0, frames - 1)(rng)] = c;
        }
      }
      head::EventSequence s;
      for (auto [f, c] : by_frame) s.push_back({c, f});
      return s;
    };
    const auto pred = make();
    const auto gt = make();
    if (std::abs(metrics::edit_score(pred, gt) - testing::oracle_edit(pred, gt)) > 1e-9) ++edit_bad;
    double prev = -1.0;
    for (int tol = 0; tol <= 4; ++tol) {
      const auto got = metrics::f1_at_tolerance(pred, gt, tol);
      const auto want = testing::oracle_f1(pred, gt, tol);
      bool same = std::abs(got.mean - want.mean) <= 1e-12 && got.per_class.size() == want.per_class.size();
      for (const auto& [c, f] : want.per_class) {
        auto it = got.per_class.find(c);
        same = same && it != got.per_class.end() && std::abs(it->second - f) <= 1e-12;
      }
      if (!same) ++f1_bad;
      if (got.mean < prev - 1e-12) ++mono_bad;
      prev = got.mean;
    }
  }
  return {edit_bad == 0 && f1_bad == 0 && mono_bad == 0,
          "1000 instances: " + std::to_string(edit_bad) + " edit and " + std::to_string(f1_bad) +
              " F1 disagreements (tolerances 0..4), " + std::to_string(mono_bad) +
              " monotonicity breaks"};
}

// 5. Feature-matching loss against a plain loop.
Outcome feature_loss() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int t = std::uniform_int_distribution<int>(1, 8)(rng);
    const int d = std::uniform_int_distribution<int>(1, 16)(rng);
    net::FrameEmbeddings a(t, d), b(t, d);
    for (double& x : a.data) x = n(rng);
    for (double& x : b.data) x = n(rng);
    double oracle = 0.0;
    for (int f = 0; f < t; ++f) {
      for (int c = 0; c < d; ++c) {
        const double diff = a.row(f)[c] - b.row(f)[c];
        oracle += diff * diff;
      }
    }
    oracle /= t;
    worst = std::max(worst, std::abs(distill::feature_matching_loss(a, b) - oracle));
  }
  net::FrameEmbeddings a(7, 64), b(7, 64);
  for (double& x : a.data) x = std::uniform_int_distribution<int>(-4, 4)(rng) * 0.25;
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = a.data[i] + 1.0;
  const double ones = distill::feature_matching_loss(a, b);
  return {worst <= 1e-9 && ones == 64.0,
          "max |loss - oracle| " + sci(worst) + " over 100 pairs; all-ones offset at d=64 gives " +
              fmt(ones, 12)};
}

struct LearnSetup {
  int clips = 150;
  int k = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int width = 16;
  int blocks = 3;
  int epochs = 20;
  int distill_epochs = 15;
  int finetune_epochs = 20;
  int raster = 32;
};

pipeline::RunConfig learn_config(const LearnSetup& s) {
  pipeline::RunConfig cfg;
  cfg.graph.blocks = net::BlockConfig::uniform(s.width, s.blocks);
  cfg.train.epochs = s.epochs;
  cfg.train.lr = 1e-2;
  cfg.train.batch_size = 2;
  cfg.train.max_windows_per_clip = 2;
  cfg.distill.epochs = s.distill_epochs;
  cfg.distill.lr = 3e-3;
  cfg.distill.finetune_epochs = s.finetune_epochs;
  cfg.distill.finetune_lr = 3e-3;
  cfg.distill.batch_size = 2;
  cfg.distill.max_windows_per_clip = 2;
  cfg.student.raster.height = s.raster;
  cfg.student.raster.width = s.raster;
  cfg.eval_fraction = 0.2;
  cfg.tolerance = 1;
  return cfg;
}

struct LearnResults {
  std::vector<double> full, pose, single_delta, distilled, scratch;
  std::vector<pipeline::RunReport> distill_reports;
  std::string error;
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i], 3);
  return s;
}

LearnResults run_learnability(const LearnSetup& s, const std::vector<data::KeypointClip>& dataset,
                              const fs::path& work) {
  LearnResults r;
  pipeline::RunConfig base = learn_config(s);
  const fs::path teachers = work / "teachers";
  fs::create_directories(teachers);
  for (std::uint64_t seed : s.seeds) {
    const auto t0 = clk::now();
    pipeline::RunConfig full = base;
    const auto rf = pipeline::run_one(full, pipeline::Mode::kTrain, dataset, s.k, seed,
                                      teachers / pipeline::run_name(s.k, seed));
    r.full.push_back(rf.metrics.f1_evt);

    pipeline::RunConfig pose = base;
    pose.graph.entities = graph::EntityConfig::kPose;
    r.pose.push_back(pipeline::run_one(pose, pipeline::Mode::kTrain, dataset, s.k, seed, {}).metrics.f1_evt);

    pipeline::RunConfig one = base;
    one.graph.blocks.deltas = {1};
    r.single_delta.push_back(pipeline::run_one(one, pipeline::Mode::kTrain, dataset, s.k, seed, {}).metrics.f1_evt);

    pipeline::RunConfig dist = base;
    dist.teacher = teachers;
    const auto rd = pipeline::run_one(dist, pipeline::Mode::kDistill, dataset, s.k, seed, {});
    r.distilled.push_back(rd.metrics.f1_evt);
    r.distill_reports.push_back(rd);

    pipeline::RunConfig scratch = base;
    scratch.model = pipeline::ModelKind::kStudent;
    scratch.student.embed_dim = s.width;
    r.scratch.push_back(pipeline::run_one(scratch, pipeline::Mode::kTrain, dataset, s.k, seed, {}).metrics.f1_evt);

    std::cout << "  seed " << seed << ": full " << fmt(r.full.back(), 3) << "  pose "
              << fmt(r.pose.back(), 3) << "  delta{1} " << fmt(r.single_delta.back(), 3)
              << "  distilled " << fmt(r.distilled.back(), 3) << "  scratch "
              << fmt(r.scratch.back(), 3) << "  (" << fmt(seconds_since(t0), 0) << " s)"
              << std::endl;
  }
  return r;
}

Outcome learnability(const LearnResults& r, double secs) {
  const double full = mean(r.full), pose = mean(r.pose), one = mean(r.single_delta);
  const double dist = mean(r.distilled), scratch = mean(r.scratch);
  const bool a = full - pose > 0.0;
  const bool b = full >= one;
  const bool c = dist >= scratch;
  std::string d;
  d += "(a) pose+ball+court " + fmt(full) + " vs pose " + fmt(pose) + (a ? " ok" : " FAIL");
  d += "; (b) delta{1,2,4} " + fmt(full) + " vs delta{1} " + fmt(one) + (b ? " ok" : " FAIL");
  d += "; (c) distilled " + fmt(dist) + " vs scratch " + fmt(scratch) + (c ? " ok" : " FAIL");
  d += "; " + fmt(secs / 60.0, 1) + " min";
  return {a && b && c && secs <= 7200.0, d};
}

// 7. k=25 against random placement at the eval set's event rate.
Outcome chance_dominance(const LearnSetup& s, const std::vector<data::KeypointClip>& dataset) {
  pipeline::RunConfig cfg = learn_config(s);
  // same number of optimizer steps as the k runs above
  cfg.train.epochs = s.epochs * s.k / 25;
  const std::uint64_t seed = s.seeds.front();
  const auto rep = pipeline::run_one(cfg, pipeline::Mode::kTrain, dataset, 25, seed, {});
  const auto split = data::make_split(dataset, 25, seed, cfg.eval_fraction);
  const auto eval = data::select_clips(dataset, split.eval_ids);
  const double chance = metrics::chance_f1(eval, cfg.tolerance, 1000, 99);
  const double ratio = chance > 0 ? rep.metrics.f1_evt / chance : INFINITY;
  return {rep.metrics.f1_evt >= 5.0 * chance,
          "trained F1@1 " + fmt(rep.metrics.f1_evt) + " vs chance " + fmt(chance, 5) + " (" +
              fmt(ratio, 1) + "x)"};
}

int sh(const std::string& cmd, const fs::path& log) {
  const std::string full = cmd + " >> \"" + log.string() + "\" 2>&1";
  return std::system(full.c_str());
}

// 8. Two CLI training runs from the same config, then a standalone re-score.
Outcome reproducibility(const fs::path& cli, const fs::path& work) {
  const fs::path dir = work / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path log = dir / "cli.log";
  const std::string exe = "\"" + cli.string() + "\"";
  const std::string data = "\"" + (dir / "data").string() + "\"";
  if (sh(exe + " synth --output " + data + " --clips 16 --frames 120 --seed 8", log) != 0) {
    return {false, "synth failed, see " + log.string()};
  }
  const std::string common = " train --dataset " + data +
                             " --k 6 --seeds 3 --widths 8,8 --epochs 3 --batch-size 2"
                             " --set train.seq_len=48 --max-windows 2 -o ";
  for (const char* run : {"a", "b"}) {
    if (sh(exe + common + "\"" + (dir / run).string() + "\"", log) != 0) {
      return {false, std::string("train run ") + run + " failed, see " + log.string()};
    }
  }
  auto report = [&](const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in).get<pipeline::RunReport>();
  };
  const auto ra = report(dir / "a" / "k6_seed3" / "report.json");
  const auto rb = report(dir / "b" / "k6_seed3" / "report.json");
  double diff = std::max(std::abs(ra.metrics.f1_evt - rb.metrics.f1_evt),
                         std::abs(ra.metrics.edit - rb.metrics.edit));
  for (const auto& [c, f] : ra.metrics.per_class_f1) {
    diff = std::max(diff, std::abs(f - rb.metrics.per_class_f1.at(c)));
  }
  const bool same_ckpt = [&] {
    std::ifstream a(dir / "a" / "k6_seed3" / "checkpoint.json"), b(dir / "b" / "k6_seed3" / "checkpoint.json");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    return sa.str() == sb.str();
  }();
  if (sh(exe + " eval --run \"" + (dir / "a" / "k6_seed3").string() + "\"", log) != 0) {
    return {false, "eval failed, see " + log.string()};
  }
  const auto re = report(dir / "a" / "k6_seed3" / "eval_report.json");
  const double eval_diff = std::max(std::abs(ra.metrics.f1_evt - re.metrics.f1_evt),
                                    std::abs(ra.metrics.edit - re.metrics.edit));
  return {diff <= 1e-9 && eval_diff <= 1e-9,
          "max metric difference " + sci(diff) + " between runs, checkpoints " +
              (same_ckpt ? "byte-identical" : "differ") + ", standalone eval difference " +
              sci(eval_diff)};
}

// 9. Checksums recorded around distill and fine-tune in the learnability runs.
Outcome freeze_contracts(const LearnResults& r) {
  int teacher_ok = 0, encoder_ok = 0;
  for (const auto& rep : r.distill_reports) {
    const auto& e = rep.extra;
    teacher_ok += e.at("teacher_checksum_before") == e.at("teacher_checksum_after");
    encoder_ok += e.at("encoder_checksum_before_finetune") == e.at("encoder_checksum_after_finetune");
  }
  const int n = static_cast<int>(r.distill_reports.size());
  return {n > 0 && teacher_ok == n && encoder_ok == n,
          "teacher unchanged in " + std::to_string(teacher_ok) + "/" + std::to_string(n) +
              " distillations, student encoder unchanged in " + std::to_string(encoder_ok) + "/" +
              std::to_string(n) + " fine-tunes"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string cli_path, work_dir = "acceptance_work";
  std::vector<int> only;
  bool quick = false;
  app.add_option("--cli", cli_path, "path to the umeg executable")->required();
  app.add_option("--work", work_dir, "scratch directory");
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_flag("--quick", quick, "two seeds and short training, for smoke runs");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

  LearnSetup setup;
  if (quick) {
    setup.seeds = {0, 1};
    setup.epochs = 4;
    setup.distill_epochs = 2;
    setup.finetune_epochs = 2;
  }

  std::map<int, std::pair<std::string, Outcome>> results;
  auto record = [&](int id, const std::string& name, Outcome o) {
    std::cout << "criterion " << id << " " << name << ": " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail << std::endl;
    results[id] = {name, std::move(o)};
  };
  auto guarded = [&](int id, const std::string& name, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    try {
      record(id, name, f());
    } catch (const std::exception& e) {
      record(id, name, {false, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "gradient fidelity", gradient_fidelity);
  guarded(2, "parameter-free shift", parameter_free_shift);
  guarded(3, "receptive-field bound", receptive_field);
  guarded(4, "metric oracles", metric_oracles);
  guarded(5, "feature-matching loss", feature_loss);

  std::vector<data::KeypointClip> dataset;
  if (wanted(6) || wanted(7) || wanted(9)) {
    data::SynthConfig sc;
    sc.num_clips = setup.clips;
    sc.seed = 2024;
    dataset = data::generate_synthetic(sc);
  }
  LearnResults learn;
  bool learned = false;
  if (wanted(6) || wanted(9)) {
    std::cout << "learnability runs: k=" << setup.k << ", " << setup.seeds.size() << " seeds, "
              << setup.clips << " noiseless clips" << std::endl;
    const auto t0 = clk::now();
    try {
      learn = run_learnability(setup, dataset, work);
      learned = true;
    } catch (const std::exception& e) {
      learn.error = e.what();
    }
    const double secs = seconds_since(t0);
    if (wanted(6)) {
      record(6, "learnability", learned ? learnability(learn, secs) : Outcome{false, "error: " + learn.error});
    }
  }
  guarded(7, "chance dominance", [&] { return chance_dominance(setup, dataset); });
  guarded(8, "reproducibility", [&] { return reproducibility(cli_path, work); });
  if (wanted(9)) {
    record(9, "freeze contracts", learned ? freeze_contracts(learn) : Outcome{false, "error: " + learn.error});
  }

  int passed = 0;
  for (const auto& [id, r] : results) passed += r.second.pass;
  std::cout << "\nsummary: " << passed << "/" << results.size() << " criteria passed\n";
  for (const auto& [id, r] : results) {
    std::cout << "  " << id << " " << r.first << ": " << (r.second.pass ? "PASS" : "FAIL") << "\n";
  }
  return passed == static_cast<int>(results.size()) ? 0 : 1;
}
