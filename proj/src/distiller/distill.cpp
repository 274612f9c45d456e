#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "umeg/config_json.hpp"
#include "umeg/distiller.hpp"
#include "umeg/errors.hpp"

namespace umeg::distill {

using nlohmann::json;

void DistillConfig::validate() const {
  if (epochs < 1 || finetune_epochs < 1) throw ConfigError("distill: epoch counts must be >= 1");
  if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw ConfigError("distill: rates must be positive");
  if (batch_size < 1) throw ConfigError("distill: batch size must be >= 1");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("distill: holdout fraction must lie in (0, 1)");
  }
  if (max_windows_per_clip < 0) throw ConfigError("distill: window cap must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("distill: weight decay must be >= 0");
}

void to_json(json& j, const DistillConfig& v) {
  j = {{"epochs", v.epochs},
       {"lr", v.lr},
       {"finetune_epochs", v.finetune_epochs},
       {"finetune_lr", v.finetune_lr},
       {"batch_size", v.batch_size},
       {"holdout_fraction", v.holdout_fraction},
       {"max_windows_per_clip", v.max_windows_per_clip},
       {"weight_decay", v.weight_decay},
       {"seed", v.seed}};
}

void from_json(const json& j, DistillConfig& v) {
  cfg::check_keys(j, {"epochs", "lr", "finetune_epochs", "finetune_lr", "batch_size",
                      "holdout_fraction", "max_windows_per_clip", "weight_decay", "seed"},
                  "distill");
  cfg::read_opt(j, "epochs", v.epochs);
  cfg::read_opt(j, "lr", v.lr);
  cfg::read_opt(j, "finetune_epochs", v.finetune_epochs);
  cfg::read_opt(j, "finetune_lr", v.finetune_lr);
  cfg::read_opt(j, "batch_size", v.batch_size);
  cfg::read_opt(j, "holdout_fraction", v.holdout_fraction);
  cfg::read_opt(j, "max_windows_per_clip", v.max_windows_per_clip);
  cfg::read_opt(j, "weight_decay", v.weight_decay);
  cfg::read_opt(j, "seed", v.seed);
}

namespace {

struct Target {
  head::Window window;
  int valid = 0;
  net::FrameEmbeddings teacher;  // valid frames only
};

net::FrameEmbeddings leading_rows(const net::FrameEmbeddings& e, int rows) {
  net::FrameEmbeddings out(rows, e.dim);
  std::copy(e.data.begin(), e.data.begin() + static_cast<std::ptrdiff_t>(out.data.size()), out.data.begin());
  return out;
}

double window_loss(StudentModel& student, const data::KeypointClip& clip, const Target& target,
                   int seq_len, bool record, net::FrameEmbeddings* grad) {
  const RasterClip frames = render_raster(clip, student.config().raster, target.window.start, seq_len);
  const net::FrameEmbeddings emb = student.embed(frames, record);
  if (!grad) return feature_matching_loss(target.teacher, leading_rows(emb, target.valid));
  net::FrameEmbeddings g;
  const double loss = feature_matching_loss(target.teacher, leading_rows(emb, target.valid), &g);
  *grad = net::FrameEmbeddings(seq_len, emb.dim);
  std::copy(g.data.begin(), g.data.end(), grad->data.begin());
  return loss;
}

}  // namespace

DistillResult distill(const UmegModel& teacher, StudentModel& student,
                      std::span<const data::KeypointClip> pool, const DistillConfig& cfg,
                      const head::TrainConfig& windows, std::ostream* log) {
  cfg.validate();
  if (pool.empty()) throw ConfigError("distill: empty clip pool");
  if (student.config().embed_dim != teacher.embedding_dim()) {
    throw ConfigError("distill: student width " + std::to_string(student.config().embed_dim) +
                      " differs from teacher width " + std::to_string(teacher.embedding_dim()));
  }
  // Labels are never needed here; drop them before anything touches the pool.
  std::vector<data::KeypointClip> clips;
  clips.reserve(pool.size());
  for (const data::KeypointClip& c : pool) clips.push_back(data::strip_labels(c));

  const int seq_len = windows.seq_len;
  std::vector<Target> targets;
  for (const head::Window& w : head::make_windows(clips, seq_len, windows.stride)) {
    const data::KeypointClip& clip = clips[w.clip];
    Target t;
    t.window = w;
    t.valid = std::min(seq_len, clip.length() - w.start);
    t.teacher = leading_rows(teacher.embed(clip, w.start, seq_len), t.valid);
    targets.push_back(std::move(t));
  }

  nn::Rng rng(cfg.seed ^ 0xd157111ULL);
  std::vector<std::size_t> order(targets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.holdout_fraction * static_cast<double>(targets.size()))));
  std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(n_hold, order.size())));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(holdout.size()), order.end());
  if (train_idx.empty()) train_idx = holdout;
  std::sort(holdout.begin(), holdout.end());

  student.set_stage(StudentStage::kDistill);
  std::vector<nn::Parameter*> params = student.trainable_parameters();
  nn::AdamWConfig opt_cfg;
  opt_cfg.weight_decay = cfg.weight_decay;
  nn::AdamW opt(params, opt_cfg);

  auto holdout_loss = [&] {
    double s = 0.0;
    for (std::size_t i : holdout) {
      s += window_loss(student, clips[targets[i].window.clip], targets[i], seq_len, false, nullptr);
    }
    return s / static_cast<double>(holdout.size());
  };

  DistillResult result;
  result.initial_holdout_loss = holdout_loss();
  result.best_holdout_loss = std::numeric_limits<double>::infinity();
  nn::Snapshot best = nn::snapshot(params);
  net::FrameEmbeddings grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> batch_order;
    if (cfg.max_windows_per_clip > 0) {
      std::map<std::size_t, std::vector<std::size_t>> by_clip;
      for (std::size_t i : train_idx) by_clip[targets[i].window.clip].push_back(i);
      for (auto& [c, ws] : by_clip) {
        std::shuffle(ws.begin(), ws.end(), rng);
        ws.resize(std::min(ws.size(), static_cast<std::size_t>(cfg.max_windows_per_clip)));
        batch_order.insert(batch_order.end(), ws.begin(), ws.end());
      }
    } else {
      batch_order = train_idx;
    }
    std::shuffle(batch_order.begin(), batch_order.end(), rng);
    const double lr = head::lr_at(epoch, cfg.epochs, windows.warmup_steps, cfg.lr);
    double train_sum = 0.0;
    for (std::size_t b0 = 0; b0 < batch_order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(batch_order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      nn::zero_grads(params);
      for (std::size_t i = b0; i < b1; ++i) {
        const Target& t = targets[batch_order[i]];
        const double loss = window_loss(student, clips[t.window.clip], t, seq_len, true, &grad);
        if (!std::isfinite(loss)) {
          throw DivergenceError("distillation diverged: non-finite loss at epoch " +
                                std::to_string(epoch) + ", clip '" + clips[t.window.clip].clip_id + "'");
        }
        train_sum += loss;
        for (double& g : grad.data) g *= scale;
        student.backward_embedding(grad);
      }
      opt.step(lr);
    }
    const double hold = holdout_loss();
    const double train_loss = batch_order.empty() ? 0.0 : train_sum / static_cast<double>(batch_order.size());
    result.history.push_back({epoch, train_loss, hold, lr});
    if (hold < result.best_holdout_loss) {
      result.best_holdout_loss = hold;
      result.best_epoch = epoch;
      best = nn::snapshot(params);
    }
    if (log) *log << "distill epoch " << epoch << " train " << train_loss << " holdout " << hold << '\n';
  }
  nn::restore(params, best);
  return result;
}

head::TrainResult finetune_student(StudentModel& student,
                                   std::span<const data::KeypointClip> labeled,
                                   const DistillConfig& cfg, const head::TrainConfig& base,
                                   std::ostream* log) {
  cfg.validate();
  student.set_stage(StudentStage::kFinetune);
  student.reset_heads(cfg.seed);
  head::TrainConfig tc = base;
  tc.epochs = cfg.finetune_epochs;
  tc.lr = cfg.finetune_lr;
  return head::train(student, labeled, tc, log);
}

}  // namespace umeg::distill
