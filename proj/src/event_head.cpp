#include "umeg/event_head.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>

#include <json.hpp>

#include "umeg/errors.hpp"
#include "umeg/kernels.hpp"

namespace umeg::head {

using nlohmann::json;

FrameScores::FrameScores(int t, int c)
    : frames(t),
      classes(c),
      event_logit(static_cast<std::size_t>(t), 0.0),
      event_prob(static_cast<std::size_t>(t), 0.5),
      class_logits(static_cast<std::size_t>(t) * c, 0.0) {}

SpottingHead::SpottingHead(int dim, int classes, nn::Rng& rng) : dim_(dim), classes_(classes) {
  require(dim >= 1 && classes >= 1, "SpottingHead: dim and classes must be positive");
  const auto d = static_cast<std::size_t>(dim);
  loc_w_ = nn::Parameter("head.localizer.weight", {d, 1}, true);
  loc_b_ = nn::Parameter("head.localizer.bias", {1}, false);
  cls_w_ = nn::Parameter("head.classifier.weight", {d, static_cast<std::size_t>(classes)}, true);
  cls_b_ = nn::Parameter("head.classifier.bias", {static_cast<std::size_t>(classes)}, false);
  nn::init_uniform(loc_w_, d, rng);
  nn::init_uniform(cls_w_, d, rng);
}

std::vector<nn::Parameter*> SpottingHead::parameters() {
  return {&loc_w_, &loc_b_, &cls_w_, &cls_b_};
}

FrameScores SpottingHead::forward(const net::FrameEmbeddings& emb) const {
  require(emb.dim == dim_, "SpottingHead: embedding width mismatch");
  FrameScores s(emb.frames, classes_);
  const auto rows = static_cast<std::size_t>(emb.frames);
  const auto d = static_cast<std::size_t>(dim_);
  nn::linear_forward(emb.data.data(), rows, d, loc_w_, &loc_b_, s.event_logit.data(), 1);
  nn::linear_forward(emb.data.data(), rows, d, cls_w_, &cls_b_, s.class_logits.data(),
                     static_cast<std::size_t>(classes_));
  for (std::size_t t = 0; t < rows; ++t) s.event_prob[t] = nn::sigmoid(s.event_logit[t]);
  return s;
}

void SpottingHead::backward(const net::FrameEmbeddings& emb, const ScoreGrad& grad,
                            net::FrameEmbeddings* d_emb) {
  const auto rows = static_cast<std::size_t>(emb.frames);
  const auto d = static_cast<std::size_t>(dim_);
  double* dx = nullptr;
  if (d_emb) {
    *d_emb = net::FrameEmbeddings(emb.frames, dim_);
    dx = d_emb->data.data();
  }
  nn::linear_backward(emb.data.data(), rows, d, loc_w_, &loc_b_, grad.event_logit.data(), 1,
                      dx, false);
  nn::linear_backward(emb.data.data(), rows, d, cls_w_, &cls_b_, grad.class_logits.data(),
                      static_cast<std::size_t>(classes_), dx, true);
}

std::string_view to_string(WarmupUnit u) {
  return u == WarmupUnit::kEpochs ? "epochs" : "steps";
}

WarmupUnit parse_warmup_unit(std::string_view s) {
  if (s == "epochs") return WarmupUnit::kEpochs;
  if (s == "steps") return WarmupUnit::kSteps;
  throw ConfigError("unknown warm-up unit '" + std::string(s) + "' (epochs|steps)");
}

void TrainConfig::validate(int max_delta) const {
  if (seq_len < 2 * max_delta || seq_len < 1) {
    throw ConfigError("train config: seq_len " + std::to_string(seq_len) +
                      " shorter than twice the largest shift offset");
  }
  if (stride < 1 || stride > seq_len) throw ConfigError("train config: stride must lie in [1, seq_len]");
  if (foreground_weight < 1.0) throw ConfigError("train config: foreground weight must be >= 1");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
  if (warmup_steps < 0) throw ConfigError("train config: warm-up must be >= 0");
  if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("train config: weight decay must be >= 0");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("train config: validation fraction must lie in [0, 1)");
  }
  if (max_windows_per_clip < 0) throw ConfigError("train config: window cap must be >= 0");
}

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

LossTerms spotting_loss(const FrameScores& scores, std::span<const data::EventLabel> labels,
                        int valid_frames, double foreground_weight, ScoreGrad* grad) {
  require(valid_frames >= 1 && valid_frames <= scores.frames, "spotting_loss: bad valid range");
  const int c = scores.classes;
  std::vector<int> label_of(static_cast<std::size_t>(valid_frames), -1);
  for (const data::EventLabel& l : labels) {
    require(l.frame >= 0 && l.frame < valid_frames, "spotting_loss: label outside window");
    require(l.class_id >= 0 && l.class_id < c, "spotting_loss: class out of range");
    label_of[static_cast<std::size_t>(l.frame)] = l.class_id;
  }
  if (grad) {
    grad->event_logit.assign(static_cast<std::size_t>(scores.frames), 0.0);
    grad->class_logits.assign(scores.class_logits.size(), 0.0);
  }
  LossTerms out;
  const double inv_t = 1.0 / valid_frames;
  int positives = 0;
  for (int t = 0; t < valid_frames; ++t) {
    if (label_of[static_cast<std::size_t>(t)] >= 0) ++positives;
  }
  for (int t = 0; t < valid_frames; ++t) {
    const double z = scores.event_logit[static_cast<std::size_t>(t)];
    const bool pos = label_of[static_cast<std::size_t>(t)] >= 0;
    const double w = pos ? foreground_weight : 1.0;
    // BCE with logits: y=1 -> softplus(-z), y=0 -> softplus(z)
    out.localization += w * (pos ? softplus(-z) : softplus(z)) * inv_t;
    if (grad) {
      grad->event_logit[static_cast<std::size_t>(t)] =
          w * (nn::sigmoid(z) - (pos ? 1.0 : 0.0)) * inv_t;
    }
  }
  if (positives > 0) {
    const double inv_p = 1.0 / positives;
    for (int t = 0; t < valid_frames; ++t) {
      const int y = label_of[static_cast<std::size_t>(t)];
      if (y < 0) continue;
      const double* z = scores.class_row(t);
      const double mx = *std::max_element(z, z + c);
      double sum = 0.0;
      for (int k = 0; k < c; ++k) sum += std::exp(z[k] - mx);
      const double lse = mx + std::log(sum);
      out.classification += (lse - z[y]) * inv_p;
      if (grad) {
        double* g = grad->class_logits.data() + static_cast<std::size_t>(t) * c;
        for (int k = 0; k < c; ++k) {
          g[k] = (std::exp(z[k] - lse) - (k == y ? 1.0 : 0.0)) * inv_p;
        }
      }
    }
  }
  return out;
}

double lr_at(int unit, int total, int warmup, double base) {
  if (unit < warmup) return base * (unit + 1) / warmup;
  const int decay = total - warmup;
  if (decay <= 0) return base;
  const double progress = std::min(1.0, static_cast<double>(unit - warmup + 1) / decay);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void DecodeConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("decode: threshold must lie in (0, 1)");
  if (radius < 1) throw ConfigError("decode: suppression radius must be >= 1");
}

EventSequence decode(const FrameScores& scores, const DecodeConfig& cfg) {
  EventSequence out;
  const int n = scores.frames;
  for (int t = 0; t < n; ++t) {
    const double p = scores.event_prob[static_cast<std::size_t>(t)];
    if (p < cfg.threshold) continue;
    bool peak = true;
    for (int s = std::max(0, t - cfg.radius); s < t && peak; ++s) {
      peak = scores.event_prob[static_cast<std::size_t>(s)] < p;
    }
    for (int s = t + 1; s <= std::min(n - 1, t + cfg.radius) && peak; ++s) {
      peak = scores.event_prob[static_cast<std::size_t>(s)] <= p;
    }
    if (!peak) continue;
    const double* z = scores.class_row(t);
    const int cls = static_cast<int>(std::max_element(z, z + scores.classes) - z);
    out.push_back({cls, t});
  }
  return out;
}

std::vector<Window> make_windows(std::span<const data::KeypointClip> clips, int seq_len,
                                 int stride) {
  const int hop = std::max(1, seq_len / stride);
  std::vector<Window> out;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const int len = clips[c].length();
    for (int s = 0;; s += hop) {
      out.push_back({c, s});
      if (s + seq_len >= len) break;
    }
  }
  return out;
}

int validation_count(int labeled, const TrainConfig& cfg) {
  if (labeled <= 1 || cfg.val_fraction <= 0.0) return 0;
  const int want = std::max(cfg.min_val_clips,
                            static_cast<int>(std::ceil(cfg.val_fraction * labeled - 1e-9)));
  return std::min(want, labeled - 1);
}

namespace {

struct WindowLoss {
  LossTerms terms;
  int valid = 0;
};

WindowLoss window_loss(SpottingModel& model, const data::KeypointClip& clip, int start,
                       const TrainConfig& cfg, bool record, ScoreGrad* grad) {
  const int valid = std::min(cfg.seq_len, clip.length() - start);
  const FrameScores scores = model.forward(clip, start, cfg.seq_len, record);
  std::vector<data::EventLabel> local;
  for (const data::EventLabel& l : clip.labels) {
    if (l.frame >= start && l.frame < start + valid) local.push_back({l.class_id, l.frame - start});
  }
  WindowLoss w;
  w.terms = spotting_loss(scores, local, valid, cfg.foreground_weight, grad);
  w.valid = valid;
  return w;
}

void check_finite(double loss, const data::KeypointClip& clip, int start, int epoch) {
  if (!std::isfinite(loss)) {
    throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                          ", clip '" + clip.clip_id + "', window start " + std::to_string(start));
  }
}

}  // namespace

double evaluate_loss(SpottingModel& model, std::span<const data::KeypointClip> clips,
                     const TrainConfig& cfg) {
  const std::vector<Window> windows = make_windows(clips, cfg.seq_len, cfg.stride);
  if (windows.empty()) return 0.0;
  double sum = 0.0;
  for (const Window& w : windows) {
    sum += window_loss(model, clips[w.clip], w.start, cfg, false, nullptr).terms.total();
  }
  return sum / static_cast<double>(windows.size());
}

TrainResult train(SpottingModel& model, std::span<const data::KeypointClip> labeled,
                  const TrainConfig& cfg, std::ostream* log) {
  if (labeled.empty()) throw ConfigError("train: no labeled clips");
  const int n_val = validation_count(static_cast<int>(labeled.size()), cfg);
  const auto n_train = labeled.size() - static_cast<std::size_t>(n_val);
  const std::span<const data::KeypointClip> train_clips = labeled.first(n_train);
  const std::span<const data::KeypointClip> val_clips = labeled.subspan(n_train);

  TrainResult result;
  for (const auto& c : train_clips) result.train_ids.push_back(c.clip_id);
  for (const auto& c : val_clips) result.val_ids.push_back(c.clip_id);

  std::vector<nn::Parameter*> params = model.trainable_parameters();
  nn::AdamWConfig opt_cfg;
  opt_cfg.weight_decay = cfg.weight_decay;
  nn::AdamW opt(params, opt_cfg);
  nn::Rng rng(cfg.seed ^ 0x7e57ab1eULL);

  const std::vector<Window> all = make_windows(train_clips, cfg.seq_len, cfg.stride);
  std::vector<std::vector<Window>> per_clip(train_clips.size());
  for (const Window& w : all) per_clip[w.clip].push_back(w);
  std::size_t per_epoch = 0;
  for (const auto& ws : per_clip) {
    per_epoch += cfg.max_windows_per_clip > 0
                     ? std::min(ws.size(), static_cast<std::size_t>(cfg.max_windows_per_clip))
                     : ws.size();
  }
  const int steps_per_epoch =
      static_cast<int>((per_epoch + static_cast<std::size_t>(cfg.batch_size) - 1) /
                       static_cast<std::size_t>(cfg.batch_size));
  const int total_steps = steps_per_epoch * cfg.epochs;

  nn::Snapshot best = nn::snapshot(params);
  result.best_val_loss = std::numeric_limits<double>::infinity();
  int step = 0;
  ScoreGrad grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<Window> order;
    for (auto ws : per_clip) {
      if (cfg.max_windows_per_clip > 0 && ws.size() > static_cast<std::size_t>(cfg.max_windows_per_clip)) {
        std::shuffle(ws.begin(), ws.end(), rng);
        ws.resize(static_cast<std::size_t>(cfg.max_windows_per_clip));
      }
      order.insert(order.end(), ws.begin(), ws.end());
    }
    std::shuffle(order.begin(), order.end(), rng);

    const double epoch_lr = cfg.warmup_unit == WarmupUnit::kEpochs
                                ? lr_at(epoch, cfg.epochs, cfg.warmup_steps, cfg.lr)
                                : lr_at(step, total_steps, cfg.warmup_steps, cfg.lr);
    double train_sum = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      nn::zero_grads(params);
      for (std::size_t i = b0; i < b1; ++i) {
        const data::KeypointClip& clip = train_clips[order[i].clip];
        const WindowLoss wl = window_loss(model, clip, order[i].start, cfg, true, &grad);
        check_finite(wl.terms.total(), clip, order[i].start, epoch);
        train_sum += wl.terms.total();
        for (double& g : grad.event_logit) g *= scale;
        for (double& g : grad.class_logits) g *= scale;
        model.backward(grad);
      }
      const double lr = cfg.warmup_unit == WarmupUnit::kEpochs
                            ? epoch_lr
                            : lr_at(step, total_steps, cfg.warmup_steps, cfg.lr);
      opt.step(lr);
      ++step;
    }
    const double train_loss = order.empty() ? 0.0 : train_sum / static_cast<double>(order.size());
    const double val_loss = val_clips.empty() ? evaluate_loss(model, train_clips, cfg)
                                              : evaluate_loss(model, val_clips, cfg);
    if (!std::isfinite(val_loss)) {
      throw DivergenceError("training diverged: non-finite validation loss at epoch " +
                            std::to_string(epoch));
    }
    result.history.push_back({epoch, train_loss, val_loss, epoch_lr});
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      best = nn::snapshot(params);
    }
    if (log) {
      *log << "epoch " << epoch << " train " << train_loss << " val " << val_loss << " lr "
           << epoch_lr << '\n';
    }
  }
  nn::restore(params, best);
  return result;
}

void write_predictions(std::ostream& out,
                       const std::map<std::string, EventSequence>& predictions) {
  for (const auto& [id, events] : predictions) {
    json ev = json::array();
    for (const data::EventLabel& e : events) ev.push_back({e.class_id, e.frame});
    out << json{{"clip_id", id}, {"events", ev}}.dump() << '\n';
  }
}

std::map<std::string, EventSequence> read_predictions(std::istream& in, std::string_view source) {
  std::map<std::string, EventSequence> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = std::string(source) + ":" + std::to_string(lineno) + ": ";
    try {
      const json j = json::parse(line);
      const std::string id = j.at("clip_id").get<std::string>();
      EventSequence seq;
      for (const json& e : j.at("events")) {
        seq.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
      }
      std::sort(seq.begin(), seq.end(), [](const auto& a, const auto& b) { return a.frame < b.frame; });
      if (!out.emplace(id, std::move(seq)).second) {
        throw ParseError(where + "duplicate clip '" + id + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(where + e.what());
    }
  }
  return out;
}

void write_history(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch\ttrain_loss\tval_loss\tlr\n";
  char buf[160];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%d\t%.10g\t%.10g\t%.10g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
    out << buf;
  }
}

}  // namespace umeg::head
