#include <algorithm>

#include "umeg/checkpoint.hpp"
#include "umeg/config_json.hpp"
#include "umeg/distiller.hpp"
#include "umeg/errors.hpp"
#include "umeg/kernels.hpp"

namespace umeg::distill {

using nlohmann::json;

void StudentConfig::validate() const {
  raster.validate();
  if (conv_channels.size() != 3) throw ConfigError("student: exactly three conv stages expected");
  for (int c : conv_channels) {
    if (c < 1) throw ConfigError("student: conv channels must be positive");
  }
  if (frame_dim < 1 || gru_hidden < 1 || embed_dim < 1 || num_classes < 1) {
    throw ConfigError("student: widths and class count must be positive");
  }
}

void to_json(json& j, const StudentConfig& v) {
  j = {{"raster", {{"height", v.raster.height}, {"width", v.raster.width}, {"sigma", v.raster.sigma}}},
       {"conv_channels", v.conv_channels},
       {"frame_dim", v.frame_dim},
       {"gru_hidden", v.gru_hidden},
       {"embed_dim", v.embed_dim},
       {"num_classes", v.num_classes},
       {"seed", v.seed}};
}

void from_json(const json& j, StudentConfig& v) {
  cfg::check_keys(j, {"raster", "conv_channels", "frame_dim", "gru_hidden", "embed_dim",
                      "num_classes", "seed"},
                  "student");
  if (j.contains("raster")) {
    const json& r = j.at("raster");
    cfg::check_keys(r, {"height", "width", "sigma"}, "student.raster");
    cfg::read_opt(r, "height", v.raster.height);
    cfg::read_opt(r, "width", v.raster.width);
    cfg::read_opt(r, "sigma", v.raster.sigma);
  }
  cfg::read_opt(j, "conv_channels", v.conv_channels);
  cfg::read_opt(j, "frame_dim", v.frame_dim);
  cfg::read_opt(j, "gru_hidden", v.gru_hidden);
  cfg::read_opt(j, "embed_dim", v.embed_dim);
  cfg::read_opt(j, "num_classes", v.num_classes);
  cfg::read_opt(j, "seed", v.seed);
}

struct StudentModel::Tape {
  int frames = 0;
  bool encoder = false;
  Conv2d::Tape conv[3];
  std::vector<double> conv_pre[3];
  std::vector<double> fc_pre;  // frames × frame_dim
  std::vector<double> feats;
  Gru::Tape gru_f, gru_b;
  std::vector<double> gru_out;  // frames × 2h
};

StudentModel::StudentModel(const StudentConfig& cfg) : cfg_(cfg), tape_(std::make_shared<Tape>()) {
  cfg_.validate();
  nn::Rng rng(cfg_.seed ^ 0x5d1e57ULL);
  int in = kRasterChannels;
  for (std::size_t i = 0; i < 3; ++i) {
    convs_.emplace_back("encoder.conv" + std::to_string(i), in, cfg_.conv_channels[i], rng);
    in = cfg_.conv_channels[i];
  }
  const auto flat = static_cast<std::size_t>((cfg_.raster.height / 8) * (cfg_.raster.width / 8) * in);
  const auto fd = static_cast<std::size_t>(cfg_.frame_dim);
  fc_w_ = nn::Parameter("encoder.frame.weight", {flat, fd}, true);
  fc_b_ = nn::Parameter("encoder.frame.bias", {fd}, false);
  nn::init_uniform(fc_w_, flat, rng);
  nn::init_uniform(fc_b_, flat, rng);
  fwd_ = Gru("temporal.gru_fwd", cfg_.frame_dim, cfg_.gru_hidden, rng);
  bwd_ = Gru("temporal.gru_bwd", cfg_.frame_dim, cfg_.gru_hidden, rng);
  const auto g2 = static_cast<std::size_t>(2 * cfg_.gru_hidden);
  proj_w_ = nn::Parameter("temporal.proj.weight", {g2, static_cast<std::size_t>(cfg_.embed_dim)}, true);
  proj_b_ = nn::Parameter("temporal.proj.bias", {static_cast<std::size_t>(cfg_.embed_dim)}, false);
  nn::init_uniform(proj_w_, g2, rng);
  nn::init_uniform(proj_b_, g2, rng);
  head_ = head::SpottingHead(cfg_.embed_dim, cfg_.num_classes, rng);
}

void StudentModel::set_stage(StudentStage s) {
  stage_ = s;
  feature_cache_.clear();
  blank_feature_.clear();
}

std::vector<nn::Parameter*> StudentModel::encoder_parameters() {
  std::vector<nn::Parameter*> ps;
  for (Conv2d& c : convs_) {
    for (nn::Parameter* p : c.parameters()) ps.push_back(p);
  }
  ps.push_back(&fc_w_);
  ps.push_back(&fc_b_);
  return ps;
}

std::vector<nn::Parameter*> StudentModel::temporal_parameters() {
  std::vector<nn::Parameter*> ps = fwd_.parameters();
  for (nn::Parameter* p : bwd_.parameters()) ps.push_back(p);
  ps.push_back(&proj_w_);
  ps.push_back(&proj_b_);
  return ps;
}

std::vector<nn::Parameter*> StudentModel::head_parameters() { return head_.parameters(); }

std::vector<nn::Parameter*> StudentModel::parameters() {
  std::vector<nn::Parameter*> ps = encoder_parameters();
  for (nn::Parameter* p : temporal_parameters()) ps.push_back(p);
  for (nn::Parameter* p : head_parameters()) ps.push_back(p);
  return ps;
}

std::vector<nn::Parameter*> StudentModel::trainable_parameters() {
  switch (stage_) {
    case StudentStage::kFull: return parameters();
    case StudentStage::kDistill: {
      std::vector<nn::Parameter*> ps = encoder_parameters();
      for (nn::Parameter* p : temporal_parameters()) ps.push_back(p);
      return ps;
    }
    case StudentStage::kFinetune: {
      std::vector<nn::Parameter*> ps = temporal_parameters();
      for (nn::Parameter* p : head_parameters()) ps.push_back(p);
      return ps;
    }
  }
  return {};
}

void StudentModel::reset_heads(std::uint64_t seed) {
  nn::Rng rng(seed ^ 0x4eadULL);
  head_ = head::SpottingHead(cfg_.embed_dim, cfg_.num_classes, rng);
}

std::vector<double> StudentModel::encode_frames(const RasterClip& frames, Tape* tape) const {
  require(frames.height == cfg_.raster.height && frames.width == cfg_.raster.width,
          "student: raster size does not match the model");
  int h = frames.height, w = frames.width;
  std::vector<double> x = frames.data;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> pre = convs_[i].forward(x, frames.frames, h, w, tape ? &tape->conv[i] : nullptr);
    h = Conv2d::output_size(h);
    w = Conv2d::output_size(w);
    x.resize(pre.size());
    kernels::relu(pre.size(), pre.data(), x.data());
    if (tape) tape->conv_pre[i] = std::move(pre);
  }
  const std::size_t flat = fc_w_.shape[0];
  const auto fd = static_cast<std::size_t>(cfg_.frame_dim);
  std::vector<double> pre(static_cast<std::size_t>(frames.frames) * fd);
  nn::linear_forward(x.data(), static_cast<std::size_t>(frames.frames), flat, fc_w_, &fc_b_, pre.data(), fd);
  std::vector<double> feats(pre.size());
  kernels::relu(pre.size(), pre.data(), feats.data());
  if (tape) tape->fc_pre = std::move(pre);
  return feats;
}

net::FrameEmbeddings StudentModel::temporal(const std::vector<double>& feats, int frames,
                                            Tape* tape) const {
  const auto h = static_cast<std::size_t>(cfg_.gru_hidden);
  std::vector<double> out(static_cast<std::size_t>(frames) * 2 * h);
  fwd_.forward(feats.data(), frames, false, out.data(), 2 * h, tape ? &tape->gru_f : nullptr);
  bwd_.forward(feats.data(), frames, true, out.data() + h, 2 * h, tape ? &tape->gru_b : nullptr);
  net::FrameEmbeddings emb(frames, cfg_.embed_dim);
  nn::linear_forward(out.data(), static_cast<std::size_t>(frames), 2 * h, proj_w_, &proj_b_,
                     emb.data.data(), static_cast<std::size_t>(cfg_.embed_dim));
  if (tape) tape->gru_out = std::move(out);
  return emb;
}

net::FrameEmbeddings StudentModel::embed(const RasterClip& frames, bool record) {
  Tape* tape = record ? tape_.get() : nullptr;
  std::vector<double> feats = encode_frames(frames, tape);
  if (tape) {
    tape->frames = frames.frames;
    tape->encoder = true;
    tape->feats = feats;
  }
  net::FrameEmbeddings emb = temporal(feats, frames.frames, tape);
  if (record) last_emb_ = emb;
  return emb;
}

void StudentModel::backward_embedding(const net::FrameEmbeddings& d_emb) {
  Tape& tp = *tape_;
  require(d_emb.frames == tp.frames, "student backward: frame count mismatch");
  const auto frames = static_cast<std::size_t>(tp.frames);
  const auto h = static_cast<std::size_t>(cfg_.gru_hidden);
  std::vector<double> d_out(frames * 2 * h);
  nn::linear_backward(tp.gru_out.data(), frames, 2 * h, proj_w_, &proj_b_, d_emb.data.data(),
                      static_cast<std::size_t>(cfg_.embed_dim), d_out.data(), false);
  const auto fd = static_cast<std::size_t>(cfg_.frame_dim);
  std::vector<double> d_feats(frames * fd, 0.0);
  fwd_.backward(tp.gru_f, d_out.data(), 2 * h, d_feats.data());
  bwd_.backward(tp.gru_b, d_out.data() + h, 2 * h, d_feats.data());
  if (stage_ == StudentStage::kFinetune || !tp.encoder) return;

  kernels::relu_backward(d_feats.size(), tp.fc_pre.data(), d_feats.data());
  const std::size_t flat = fc_w_.shape[0];
  std::vector<double> dx(frames * flat);
  // input of the frame projection is relu(conv_pre[2])
  std::vector<double> act(tp.conv_pre[2].size());
  kernels::relu(act.size(), tp.conv_pre[2].data(), act.data());
  nn::linear_backward(act.data(), frames, flat, fc_w_, &fc_b_, d_feats.data(), fd, dx.data(), false);
  for (std::size_t i = 3; i-- > 0;) {
    kernels::relu_backward(dx.size(), tp.conv_pre[i].data(), dx.data());
    dx = convs_[i].backward(tp.conv[i], dx, i > 0);
  }
}

const std::vector<double>& StudentModel::cached_features(const data::KeypointClip& clip) {
  auto it = feature_cache_.find(clip.clip_id);
  if (it != feature_cache_.end()) return it->second;
  const auto fd = static_cast<std::size_t>(cfg_.frame_dim);
  std::vector<double> all;
  all.reserve(static_cast<std::size_t>(clip.length()) * fd);
  constexpr int kChunk = 64;
  for (int s = 0; s < clip.length(); s += kChunk) {
    const int len = std::min(kChunk, clip.length() - s);
    const std::vector<double> f = encode_frames(render_raster(clip, cfg_.raster, s, len), nullptr);
    all.insert(all.end(), f.begin(), f.end());
  }
  return feature_cache_.emplace(clip.clip_id, std::move(all)).first->second;
}

head::FrameScores StudentModel::forward(const data::KeypointClip& clip, int start, int length,
                                        bool record) {
  if (stage_ != StudentStage::kFinetune) {
    const RasterClip frames = render_raster(clip, cfg_.raster, start, length);
    return head_.forward(embed(frames, record));
  }
  // Frozen encoder: per-frame features are fixed, so reuse them.
  const auto fd = static_cast<std::size_t>(cfg_.frame_dim);
  if (blank_feature_.empty()) {
    RasterClip blank;
    blank.frames = 1;
    blank.height = cfg_.raster.height;
    blank.width = cfg_.raster.width;
    blank.data.assign(static_cast<std::size_t>(blank.height) * blank.width * kRasterChannels, 0.0);
    blank_feature_ = encode_frames(blank, nullptr);
  }
  const std::vector<double>& all = cached_features(clip);
  std::vector<double> feats(static_cast<std::size_t>(length) * fd);
  for (int t = 0; t < length; ++t) {
    const int src = start + t;
    const double* row = src < clip.length() ? all.data() + static_cast<std::size_t>(src) * fd
                                            : blank_feature_.data();
    std::copy(row, row + fd, feats.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * fd));
  }
  Tape* tape = record ? tape_.get() : nullptr;
  if (tape) {
    tape->frames = length;
    tape->encoder = false;
  }
  net::FrameEmbeddings emb = temporal(feats, length, tape);
  if (record) last_emb_ = emb;
  return head_.forward(emb);
}

void StudentModel::backward(const head::ScoreGrad& grad) {
  net::FrameEmbeddings d_emb;
  head_.backward(last_emb_, grad, &d_emb);
  backward_embedding(d_emb);
}

void save_student(const std::filesystem::path& path, StudentModel& model) {
  ckpt::save(path, ckpt::make_checkpoint(kStudentKind, json(model.config()), model.parameters()));
}

std::unique_ptr<StudentModel> load_student(const std::filesystem::path& path) {
  const json j = ckpt::read(path);
  StudentConfig cfg;
  try {
    cfg = j.at("config").get<StudentConfig>();
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path.string() + "': bad config: " + e.what());
  }
  auto model = std::make_unique<StudentModel>(cfg);
  ckpt::load_parameters(j, kStudentKind, model->parameters());
  return model;
}

}  // namespace umeg::distill
