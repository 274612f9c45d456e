#pragma once

// Teacher-to-student distillation. The student reads rasterised keypoint
// frames (Gaussian blobs per entity channel) through a small convolutional
// frame encoder and a bidirectional GRU; it is fitted to the frozen graph
// teacher's per-frame embeddings on unlabeled clips, then its temporal block
// and fresh heads are fine-tuned on the labeled clips.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "umeg/event_head.hpp"
#include "umeg/keypoint_data.hpp"
#include "umeg/model.hpp"
#include "umeg/nn.hpp"
#include "umeg/umeg_net.hpp"

namespace umeg::distill {

struct RasterConfig {
  int height = 64;
  int width = 64;
  double sigma = 1.5;  // pixels

  void validate() const;
};

inline constexpr int kRasterChannels = 3;  // persons, ball, court

// T×H×W×3, values in [0, 1]. Pixel (row i, col j) is centred on the
// normalized point (j/W, i/H); a keypoint contributes exp(-r²/2σ²) and
// overlapping blobs combine by max.
struct RasterClip {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  double at(int t, int i, int j, int ch) const {
    return data[((static_cast<std::size_t>(t) * height + i) * width + j) * kRasterChannels + ch];
  }
};

// Frames [start, start+length) of the clip; frames past its end are blank.
RasterClip render_raster(const data::KeypointClip& clip, const RasterConfig& cfg, int start,
                         int length);
RasterClip render_raster(const data::KeypointClip& clip, const RasterConfig& cfg);

// (1/T)·Σ_t ‖a_t − b_t‖². Writes dL/db into grad_b when non-null.
double feature_matching_loss(const net::FrameEmbeddings& a, const net::FrameEmbeddings& b,
                             net::FrameEmbeddings* grad_b = nullptr);

// 3×3, stride 2, padding 1 convolution on H×W×C frames, via im2col + GEMM.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, nn::Rng& rng);

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  static int output_size(int n) { return (n + 1) / 2; }
  std::vector<nn::Parameter*> parameters() { return {&w_, &b_}; }

  struct Tape {
    std::vector<double> patches;  // (frames·Ho·Wo) × (9·C)
    int frames = 0, height = 0, width = 0;
  };
  // Input frames×H×W×C, output frames×Ho×Wo×Cout (pre-activation).
  std::vector<double> forward(const std::vector<double>& x, int frames, int height, int width,
                              Tape* tape) const;
  // Accumulates dW, db; returns dL/dx when want_dx.
  std::vector<double> backward(const Tape& tape, const std::vector<double>& dy, bool want_dx);

 private:
  int in_ = 0, out_ = 0;
  nn::Parameter w_, b_;
};

// Single-direction GRU, gate order (reset, update, new).
class Gru {
 public:
  Gru() = default;
  Gru(std::string name, int input, int hidden, nn::Rng& rng);

  int hidden() const { return hidden_; }
  std::vector<nn::Parameter*> parameters() { return {&wi_, &bi_, &wh_, &bh_}; }

  struct Tape {
    std::vector<double> x, h, r, z, n, hn;  // per step, h includes h_{-1}=0
    int steps = 0;
    bool reverse = false;
  };
  // x: steps × input. Writes hidden states (steps × hidden) into out with row
  // stride ld_out. Runs back to front when reverse.
  void forward(const double* x, int steps, bool reverse, double* out, std::size_t ld_out,
               Tape* tape) const;
  // dy rows with stride ld_dy; accumulates parameter gradients and adds dL/dx
  // into dx (steps × input).
  void backward(const Tape& tape, const double* dy, std::size_t ld_dy, double* dx);

 private:
  int input_ = 0, hidden_ = 0;
  nn::Parameter wi_, bi_, wh_, bh_;
};

struct StudentConfig {
  RasterConfig raster;
  std::vector<int> conv_channels{8, 16, 16};
  int frame_dim = 64;
  int gru_hidden = 32;
  int embed_dim = 128;  // must equal the teacher's output width
  int num_classes = data::kSynthClasses;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const StudentConfig& v);
void from_json(const nlohmann::json& j, StudentConfig& v);

// What the trainer may update.
enum class StudentStage {
  kFull,      // everything, used for the from-scratch baseline
  kDistill,   // frame encoder + temporal block, against teacher embeddings
  kFinetune,  // temporal block + heads; frame encoder frozen
};

class StudentModel : public head::SpottingModel {
 public:
  explicit StudentModel(const StudentConfig& cfg);

  const StudentConfig& config() const { return cfg_; }
  StudentStage stage() const { return stage_; }
  void set_stage(StudentStage s);

  std::vector<nn::Parameter*> encoder_parameters();   // convs + frame projection
  std::vector<nn::Parameter*> temporal_parameters();  // BiGRU + output projection
  std::vector<nn::Parameter*> head_parameters();
  std::vector<nn::Parameter*> parameters();
  std::vector<nn::Parameter*> trainable_parameters() override;

  // Replaces the heads by freshly initialised ones.
  void reset_heads(std::uint64_t seed);

  net::FrameEmbeddings embed(const RasterClip& frames, bool record);
  // d_emb from the last recorded embed(); honours the current stage.
  void backward_embedding(const net::FrameEmbeddings& d_emb);

  head::FrameScores forward(const data::KeypointClip& clip, int start, int length,
                            bool record) override;
  void backward(const head::ScoreGrad& grad) override;

 private:
  struct Tape;
  std::vector<double> encode_frames(const RasterClip& frames, Tape* tape) const;
  const std::vector<double>& cached_features(const data::KeypointClip& clip);
  net::FrameEmbeddings temporal(const std::vector<double>& feats, int frames, Tape* tape) const;

  StudentConfig cfg_;
  StudentStage stage_ = StudentStage::kFull;
  std::vector<Conv2d> convs_;
  nn::Parameter fc_w_, fc_b_;
  Gru fwd_, bwd_;
  nn::Parameter proj_w_, proj_b_;
  head::SpottingHead head_;
  std::shared_ptr<Tape> tape_;
  net::FrameEmbeddings last_emb_;
  // Frozen-encoder features per clip id, valid in the fine-tune stage.
  std::map<std::string, std::vector<double>> feature_cache_;
  std::vector<double> blank_feature_;
};

inline constexpr std::string_view kStudentKind = "student";

void save_student(const std::filesystem::path& path, StudentModel& model);
std::unique_ptr<StudentModel> load_student(const std::filesystem::path& path);

struct DistillConfig {
  int epochs = 50;
  double lr = 1e-4;
  int finetune_epochs = 10;
  double finetune_lr = 1e-3;
  int batch_size = 8;
  double holdout_fraction = 0.1;
  int max_windows_per_clip = 0;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const DistillConfig& v);
void from_json(const nlohmann::json& j, DistillConfig& v);

struct DistillRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;
  double lr = 0.0;
};

struct DistillResult {
  std::vector<DistillRecord> history;
  int best_epoch = 0;
  // Mean feature-matching loss on the held-out windows.
  double initial_holdout_loss = 0.0;
  double best_holdout_loss = 0.0;
};

// Fits the student's encoder and temporal block to the teacher's window
// embeddings. The pool is used with labels stripped; windows follow
// `windows.seq_len` / `windows.stride`. The teacher is only read.
DistillResult distill(const UmegModel& teacher, StudentModel& student,
                      std::span<const data::KeypointClip> pool, const DistillConfig& cfg,
                      const head::TrainConfig& windows, std::ostream* log = nullptr);

// Fresh heads, frozen frame encoder, trains temporal block + heads.
head::TrainResult finetune_student(StudentModel& student,
                                   std::span<const data::KeypointClip> labeled,
                                   const DistillConfig& cfg, const head::TrainConfig& base,
                                   std::ostream* log = nullptr);

}  // namespace umeg::distill
