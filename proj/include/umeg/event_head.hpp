#pragma once

// Per-frame localizer/classifier heads, the foreground-weighted spotting loss,
// the learning-rate schedule, a model-agnostic window trainer, and decoding of
// frame scores into event sequences.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "umeg/keypoint_data.hpp"
#include "umeg/nn.hpp"
#include "umeg/umeg_net.hpp"

namespace umeg::head {

using EventSequence = std::vector<data::EventLabel>;

struct FrameScores {
  int frames = 0;
  int classes = 0;
  std::vector<double> event_logit;   // T, pre-sigmoid
  std::vector<double> event_prob;    // T
  std::vector<double> class_logits;  // T×C

  FrameScores() = default;
  FrameScores(int t, int c);
  const double* class_row(int t) const {
    return class_logits.data() + static_cast<std::size_t>(t) * classes;
  }
};

// dLoss/d(event_logit) and dLoss/d(class_logits).
struct ScoreGrad {
  std::vector<double> event_logit;
  std::vector<double> class_logits;
};

class SpottingHead {
 public:
  SpottingHead() = default;
  SpottingHead(int dim, int classes, nn::Rng& rng);

  int dim() const { return dim_; }
  int classes() const { return classes_; }
  std::vector<nn::Parameter*> parameters();

  FrameScores forward(const net::FrameEmbeddings& emb) const;
  // Accumulates head gradients; writes dL/d(emb) into d_emb when non-null.
  void backward(const net::FrameEmbeddings& emb, const ScoreGrad& grad,
                net::FrameEmbeddings* d_emb);

 private:
  int dim_ = 0;
  int classes_ = 0;
  nn::Parameter loc_w_, loc_b_, cls_w_, cls_b_;
};

enum class WarmupUnit { kEpochs, kSteps };

std::string_view to_string(WarmupUnit u);
WarmupUnit parse_warmup_unit(std::string_view s);

struct TrainConfig {
  int seq_len = 96;
  // Windows advance by seq_len / stride frames.
  int stride = 2;
  double foreground_weight = 5.0;
  int epochs = 50;
  double lr = 1e-3;
  int warmup_steps = 3;
  WarmupUnit warmup_unit = WarmupUnit::kEpochs;
  int batch_size = 8;
  double weight_decay = 0.01;
  double val_fraction = 0.2;
  int min_val_clips = 2;
  // 0 keeps every window; otherwise at most this many random windows per
  // clip per epoch.
  int max_windows_per_clip = 0;
  std::uint64_t seed = 0;

  void validate(int max_delta) const;
};

struct LossTerms {
  double localization = 0.0;
  double classification = 0.0;
  double total() const { return localization + classification; }
};

// Localization: mean over the first `valid_frames` frames of w_t·BCE(p_t, y_t)
// with w_t = foreground_weight on labeled frames. Classification: mean
// cross-entropy over labeled frames, 0 when there are none. Label frames are
// relative to the window and must lie in [0, valid_frames).
LossTerms spotting_loss(const FrameScores& scores, std::span<const data::EventLabel> labels,
                        int valid_frames, double foreground_weight,
                        ScoreGrad* grad = nullptr);

// Linear warm-up to `base` over `warmup` units, then cosine decay reaching 0
// at unit `total - 1`.
double lr_at(int unit, int total, int warmup, double base);

struct DecodeConfig {
  double threshold = 0.5;
  int radius = 2;
  void validate() const;
};

// Frames whose probability reaches the threshold and is a local maximum
// within ±radius; on plateaus the earliest frame wins.
EventSequence decode(const FrameScores& scores, const DecodeConfig& cfg);

// Anything the trainer can fit: scores a window of a clip and backpropagates
// the most recent recorded forward.
class SpottingModel {
 public:
  virtual ~SpottingModel() = default;
  virtual std::vector<nn::Parameter*> trainable_parameters() = 0;
  virtual FrameScores forward(const data::KeypointClip& clip, int start, int length,
                              bool record) = 0;
  virtual void backward(const ScoreGrad& grad) = 0;

  FrameScores predict(const data::KeypointClip& clip) {
    return forward(clip, 0, clip.length(), false);
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
};

struct Window {
  std::size_t clip = 0;
  int start = 0;
};

std::vector<Window> make_windows(std::span<const data::KeypointClip> clips, int seq_len,
                                 int stride);

// Number of labeled clips held out for checkpoint selection.
int validation_count(int labeled, const TrainConfig& cfg);

// Mean spotting loss over every window of `clips`.
double evaluate_loss(SpottingModel& model, std::span<const data::KeypointClip> clips,
                     const TrainConfig& cfg);

// Fits the model's trainable parameters on `labeled`, keeping the epoch with
// the lowest validation loss. Throws DivergenceError on a non-finite loss.
TrainResult train(SpottingModel& model, std::span<const data::KeypointClip> labeled,
                  const TrainConfig& cfg, std::ostream* log = nullptr);

// Prediction file: one {"clip_id", "events": [[class, frame], ...]} per line.
void write_predictions(std::ostream& out,
                       const std::map<std::string, EventSequence>& predictions);
std::map<std::string, EventSequence> read_predictions(std::istream& in,
                                                      std::string_view source);

void write_history(std::ostream& out, std::span<const EpochRecord> history);

}  // namespace umeg::head
