#include "umeg/umeg_net.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "umeg/errors.hpp"
#include "umeg/kernels.hpp"

namespace umeg::net {

using kernels::Trans;

namespace {
constexpr double kNormEps = 1e-5;

void add_column_sums(const double* x, std::size_t rows, std::size_t cols,
                     std::size_t ld, double* out) {
  for (std::size_t r = 0; r < rows; ++r) kernels::axpy(cols, 1.0, x + r * ld, out);
}
}  // namespace

void BlockConfig::validate() const {
  if (widths.empty()) throw ConfigError("block config: at least one block required");
  if (!(shift_fraction > 0.0 && shift_fraction <= 0.5)) {
    throw ConfigError("block config: shift fraction must lie in (0, 1/2]");
  }
  if (deltas.empty()) throw ConfigError("block config: shift offsets must be non-empty");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (deltas[i] < 1) throw ConfigError("block config: shift offsets must be positive");
    if (i > 0 && deltas[i] <= deltas[i - 1]) {
      throw ConfigError("block config: shift offsets must be strictly ascending");
    }
  }
  for (int w : widths) {
    if (w < static_cast<int>(deltas.size()) || w < 2) {
      throw ConfigError("block config: width " + std::to_string(w) +
                        " smaller than the number of shift offsets");
    }
  }
}

BlockConfig BlockConfig::uniform(int width, int blocks) {
  BlockConfig c;
  c.widths.assign(static_cast<std::size_t>(blocks), width);
  return c;
}

ChannelSplit channel_split(int channels, double alpha) {
  require(channels >= 1, "channel_split: need at least one channel");
  ChannelSplit s;
  const int shifted = static_cast<int>(std::floor(alpha * channels + 1e-12));
  s.forward_channels = shifted;
  s.backward_channels = shifted;
  s.static_channels = channels - 2 * shifted;
  require(s.static_channels >= 0, "channel_split: alpha above 1/2");
  if (shifted == 0) {
    s.degenerate = true;
    std::cerr << "warning: shift fraction " << alpha << " moves no channel at width "
              << channels << "; all channels stay static\n";
  }
  return s;
}

NodeFeatures gcn_layer(const NodeFeatures& h, const nn::Matrix& adjacency,
                       const nn::Matrix& weight) {
  require(adjacency.rows == static_cast<std::size_t>(h.nodes) &&
              adjacency.cols == static_cast<std::size_t>(h.nodes),
          "gcn_layer: adjacency does not match node count");
  require(weight.rows == static_cast<std::size_t>(h.channels),
          "gcn_layer: weight rows do not match channel count");
  const int out = static_cast<int>(weight.cols);
  std::vector<double> hw(h.rows() * static_cast<std::size_t>(out));
  kernels::gemm(Trans::kNo, Trans::kNo, h.rows(), static_cast<std::size_t>(out),
                static_cast<std::size_t>(h.channels), h.data.data(),
                static_cast<std::size_t>(h.channels), weight.data.data(), weight.cols,
                hw.data(), static_cast<std::size_t>(out), false);
  NodeFeatures z(h.nodes, h.frames, out);
  const std::size_t span = static_cast<std::size_t>(h.frames) * out;
  kernels::gemm(Trans::kNo, Trans::kNo, static_cast<std::size_t>(h.nodes), span,
                static_cast<std::size_t>(h.nodes), adjacency.data.data(), adjacency.cols,
                hw.data(), span, z.data.data(), span, false);
  kernels::relu(z.data.size(), z.data.data(), z.data.data());
  return z;
}

ChannelParts split_frame(const nn::Matrix& frame, double alpha) {
  const ChannelSplit s = channel_split(static_cast<int>(frame.cols), alpha);
  ChannelParts p{nn::Matrix(frame.rows, static_cast<std::size_t>(s.static_channels)),
                 nn::Matrix(frame.rows, static_cast<std::size_t>(s.forward_channels)),
                 nn::Matrix(frame.rows, static_cast<std::size_t>(s.backward_channels))};
  for (std::size_t v = 0; v < frame.rows; ++v) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < p.static_part.cols; ++i) p.static_part(v, i) = frame(v, c++);
    for (std::size_t i = 0; i < p.forward_part.cols; ++i) p.forward_part(v, i) = frame(v, c++);
    for (std::size_t i = 0; i < p.backward_part.cols; ++i) p.backward_part(v, i) = frame(v, c++);
  }
  return p;
}

nn::Matrix concat_parts(const ChannelParts& parts) {
  const std::size_t rows = parts.static_part.rows;
  nn::Matrix out(rows, parts.static_part.cols + parts.forward_part.cols +
                           parts.backward_part.cols);
  for (std::size_t v = 0; v < rows; ++v) {
    std::size_t c = 0;
    for (const nn::Matrix* m : {&parts.static_part, &parts.forward_part, &parts.backward_part}) {
      for (std::size_t i = 0; i < m->cols; ++i) out(v, c++) = (*m)(v, i);
    }
  }
  return out;
}

NodeFeatures shift_streams(const NodeFeatures& h, double alpha, int delta) {
  require(delta >= 1, "shift_streams: offset must be >= 1");
  const ChannelSplit s = channel_split(h.channels, alpha);
  NodeFeatures out(h.nodes, h.frames, h.channels);
  const int fwd0 = s.static_channels;
  const int bwd0 = s.static_channels + s.forward_channels;
  for (int v = 0; v < h.nodes; ++v) {
    for (int t = 0; t < h.frames; ++t) {
      double* dst = out.at(v, t);
      const double* cur = h.at(v, t);
      std::copy(cur, cur + s.static_channels, dst);
      if (t - delta >= 0) {
        const double* src = h.at(v, t - delta) + fwd0;
        std::copy(src, src + s.forward_channels, dst + fwd0);
      }
      if (t + delta < h.frames) {
        const double* src = h.at(v, t + delta) + bwd0;
        std::copy(src, src + s.backward_channels, dst + bwd0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

UmegBlock::UmegBlock(int index, int in_dim, int out_dim, const BlockConfig& cfg,
                     int node_count, nn::Rng& rng)
    : cfg_(cfg),
      in_dim_(in_dim),
      out_dim_(out_dim),
      fuse_dim_(out_dim / static_cast<int>(cfg.deltas.size())),
      node_count_(node_count),
      split_(channel_split(in_dim, cfg.shift_fraction)) {
  const std::string prefix = "blocks." + std::to_string(index) + ".";
  const auto din = static_cast<std::size_t>(in_dim);
  const auto dout = static_cast<std::size_t>(out_dim);
  const auto m = static_cast<std::size_t>(fuse_dim_);
  const std::size_t streams = cfg.deltas.size();
  gcn_w_ = nn::Parameter(prefix + "gcn.weight", {din, dout}, true);
  nn::init_uniform(gcn_w_, din, rng);
  for (std::size_t j = 0; j < streams; ++j) {
    fuse_in_w_.emplace_back(prefix + "fuse_in." + std::to_string(j) + ".weight",
                            std::vector<std::size_t>{dout, m}, true);
    fuse_in_b_.emplace_back(prefix + "fuse_in." + std::to_string(j) + ".bias",
                            std::vector<std::size_t>{m}, false);
    nn::init_uniform(fuse_in_w_.back(), dout, rng);
    nn::init_uniform(fuse_in_b_.back(), dout, rng);
  }
  fuse_out_w_ = nn::Parameter(prefix + "fuse_out.weight", {streams * m, dout}, true);
  fuse_out_b_ = nn::Parameter(prefix + "fuse_out.bias", {dout}, false);
  nn::init_uniform(fuse_out_w_, streams * m, rng);
  nn::init_uniform(fuse_out_b_, streams * m, rng);
  if (in_dim != out_dim) {
    residual_w_.emplace(prefix + "residual.weight", std::vector<std::size_t>{din, dout}, true);
    nn::init_uniform(*residual_w_, din, rng);
  }
  if (cfg.refine_topology) {
    const auto v = static_cast<std::size_t>(node_count);
    refine_.emplace(prefix + "refine", std::vector<std::size_t>{v, v}, false);
  }
}

std::vector<nn::Parameter*> UmegBlock::parameters() {
  std::vector<nn::Parameter*> ps{&gcn_w_};
  for (std::size_t j = 0; j < fuse_in_w_.size(); ++j) {
    ps.push_back(&fuse_in_w_[j]);
    ps.push_back(&fuse_in_b_[j]);
  }
  ps.push_back(&fuse_out_w_);
  ps.push_back(&fuse_out_b_);
  if (residual_w_) ps.push_back(&*residual_w_);
  if (refine_) ps.push_back(&*refine_);
  return ps;
}

nn::Matrix UmegBlock::effective_adjacency(const nn::Matrix& adjacency) const {
  require(adjacency.rows == static_cast<std::size_t>(node_count_) &&
              adjacency.cols == static_cast<std::size_t>(node_count_),
          "umeg_block: adjacency does not match node count");
  nn::Matrix a = adjacency;
  if (refine_) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += refine_->value[i];
  }
  return a;
}

NodeFeatures UmegBlock::fuse(const NodeFeatures& h,
                             std::span<const std::vector<double>> streams,
                             Tape* tape) const {
  const std::size_t rows = h.rows();
  const auto dout = static_cast<std::size_t>(out_dim_);
  const auto m = static_cast<std::size_t>(fuse_dim_);
  const std::size_t width = streams.size() * m;
  std::vector<double> fused(rows * width);
  std::vector<double> z(rows * dout);
  for (std::size_t j = 0; j < streams.size(); ++j) {
    kernels::relu(z.size(), streams[j].data(), z.data());
    nn::linear_forward(z.data(), rows, dout, fuse_in_w_[j], &fuse_in_b_[j],
                       fused.data() + j * m, width);
  }
  std::vector<double> act(fused.size());
  kernels::relu(act.size(), fused.data(), act.data());
  NodeFeatures out(h.nodes, h.frames, out_dim_);
  nn::linear_forward(act.data(), rows, width, fuse_out_w_, &fuse_out_b_,
                     out.data.data(), dout);
  if (residual_w_) {
    nn::linear_forward(h.data.data(), rows, static_cast<std::size_t>(in_dim_),
                       *residual_w_, nullptr, out.data.data(), dout, true);
  } else {
    kernels::axpy(out.data.size(), 1.0, h.data.data(), out.data.data());
  }
  if (tape) tape->fused = std::move(fused);
  return out;
}

NodeFeatures UmegBlock::forward(const NodeFeatures& h, const nn::Matrix& adjacency,
                                Tape* tape) const {
  require(h.channels == in_dim_, "umeg_block: input width mismatch");
  require(h.nodes == node_count_, "umeg_block: node count mismatch");
  const nn::Matrix a = effective_adjacency(adjacency);
  const std::size_t rows = h.rows();
  const auto din = static_cast<std::size_t>(in_dim_);
  const auto dout = static_cast<std::size_t>(out_dim_);
  const auto ds = static_cast<std::size_t>(split_.static_channels);
  const auto df = static_cast<std::size_t>(split_.forward_channels);
  const auto db = static_cast<std::size_t>(split_.backward_channels);
  const double* w = gcn_w_.value.data();

  // Channel-group projections: shift(H)·W = Σ_group shift_group(H_group·W_group).
  std::vector<double> ps(rows * dout), pf(rows * dout, 0.0), pb(rows * dout, 0.0);
  kernels::gemm(Trans::kNo, Trans::kNo, rows, dout, ds, h.data.data(), din, w, dout,
                ps.data(), dout, false);
  if (df > 0) {
    kernels::gemm(Trans::kNo, Trans::kNo, rows, dout, df, h.data.data() + ds, din,
                  w + ds * dout, dout, pf.data(), dout, false);
    kernels::gemm(Trans::kNo, Trans::kNo, rows, dout, db, h.data.data() + ds + df, din,
                  w + (ds + df) * dout, dout, pb.data(), dout, false);
  }

  const std::size_t span = static_cast<std::size_t>(h.frames) * dout;
  std::vector<std::vector<double>> stream_in(cfg_.deltas.size());
  std::vector<std::vector<double>> stream_pre(cfg_.deltas.size());
  for (std::size_t j = 0; j < cfg_.deltas.size(); ++j) {
    const int delta = cfg_.identity_shift ? 0 : cfg_.deltas[j];
    std::vector<double>& y = stream_in[j];
    y = ps;
    for (int v = 0; v < h.nodes; ++v) {
      for (int t = 0; t < h.frames; ++t) {
        double* dst = y.data() + (static_cast<std::size_t>(v) * h.frames + t) * dout;
        if (df > 0 && t - delta >= 0) {
          kernels::axpy(dout, 1.0, pf.data() + (static_cast<std::size_t>(v) * h.frames + t - delta) * dout, dst);
        }
        if (db > 0 && t + delta < h.frames) {
          kernels::axpy(dout, 1.0, pb.data() + (static_cast<std::size_t>(v) * h.frames + t + delta) * dout, dst);
        }
      }
    }
    stream_pre[j].resize(rows * dout);
    kernels::gemm(Trans::kNo, Trans::kNo, static_cast<std::size_t>(h.nodes), span,
                  static_cast<std::size_t>(h.nodes), a.data.data(), a.cols, y.data(), span,
                  stream_pre[j].data(), span, false);
  }
  NodeFeatures out = fuse(h, stream_pre, tape);
  if (tape) {
    tape->input = h;
    tape->adjacency = a;
    tape->proj_static = std::move(ps);
    tape->proj_forward = std::move(pf);
    tape->proj_backward = std::move(pb);
    tape->stream_in = std::move(stream_in);
    tape->stream_pre = std::move(stream_pre);
  }
  return out;
}

NodeFeatures UmegBlock::forward_reference(const NodeFeatures& h,
                                          const nn::Matrix& adjacency) const {
  require(h.channels == in_dim_, "umeg_block: input width mismatch");
  const nn::Matrix a = effective_adjacency(adjacency);
  nn::Matrix w(static_cast<std::size_t>(in_dim_), static_cast<std::size_t>(out_dim_));
  w.data = gcn_w_.value;
  std::vector<std::vector<double>> stream_pre;
  for (int delta : cfg_.deltas) {
    const NodeFeatures shifted = cfg_.identity_shift ? h : shift_streams(h, cfg_.shift_fraction, delta);
    // Pre-activation of ReLU(A·H̃·W).
    std::vector<double> hw(h.rows() * static_cast<std::size_t>(out_dim_));
    kernels::gemm(Trans::kNo, Trans::kNo, h.rows(), static_cast<std::size_t>(out_dim_),
                  static_cast<std::size_t>(in_dim_), shifted.data.data(),
                  static_cast<std::size_t>(in_dim_), w.data.data(), w.cols, hw.data(),
                  static_cast<std::size_t>(out_dim_), false);
    std::vector<double> pre(hw.size());
    const std::size_t span = static_cast<std::size_t>(h.frames) * out_dim_;
    kernels::gemm(Trans::kNo, Trans::kNo, static_cast<std::size_t>(h.nodes), span,
                  static_cast<std::size_t>(h.nodes), a.data.data(), a.cols, hw.data(), span,
                  pre.data(), span, false);
    stream_pre.push_back(std::move(pre));
  }
  return fuse(h, stream_pre, nullptr);
}

NodeFeatures UmegBlock::backward(const Tape& tape, const NodeFeatures& d_out) {
  const NodeFeatures& h = tape.input;
  require(d_out.nodes == h.nodes && d_out.frames == h.frames && d_out.channels == out_dim_,
          "umeg_block backward: gradient shape mismatch");
  const std::size_t rows = h.rows();
  const auto din = static_cast<std::size_t>(in_dim_);
  const auto dout = static_cast<std::size_t>(out_dim_);
  const auto m = static_cast<std::size_t>(fuse_dim_);
  const std::size_t streams = cfg_.deltas.size();
  const std::size_t width = streams * m;
  const auto nodes = static_cast<std::size_t>(h.nodes);
  const std::size_t span = static_cast<std::size_t>(h.frames) * dout;
  const auto ds = static_cast<std::size_t>(split_.static_channels);
  const auto df = static_cast<std::size_t>(split_.forward_channels);
  const auto db = static_cast<std::size_t>(split_.backward_channels);

  NodeFeatures dh(h.nodes, h.frames, in_dim_);
  if (residual_w_) {
    nn::linear_backward(h.data.data(), rows, din, *residual_w_, nullptr,
                        d_out.data.data(), dout, dh.data.data(), false);
  } else {
    dh.data = d_out.data;
  }

  std::vector<double> act(tape.fused.size());
  kernels::relu(act.size(), tape.fused.data(), act.data());
  std::vector<double> d_fused(rows * width);
  nn::linear_backward(act.data(), rows, width, fuse_out_w_, &fuse_out_b_,
                      d_out.data.data(), dout, d_fused.data(), false);
  kernels::relu_backward(d_fused.size(), tape.fused.data(), d_fused.data());

  std::vector<double> dps(rows * dout, 0.0), dpf(rows * dout, 0.0), dpb(rows * dout, 0.0);
  std::vector<double> z(rows * dout), dz(rows * dout), dy(rows * dout);
  for (std::size_t j = 0; j < streams; ++j) {
    const std::vector<double>& pre = tape.stream_pre[j];
    kernels::relu(z.size(), pre.data(), z.data());
    // F1_j: dW += Zᵀ·dU_j, db += Σ dU_j, dZ = dU_j·Wᵀ
    kernels::gemm(Trans::kYes, Trans::kNo, dout, m, rows, z.data(), dout,
                  d_fused.data() + j * m, width, fuse_in_w_[j].grad.data(), m, true);
    add_column_sums(d_fused.data() + j * m, rows, m, width, fuse_in_b_[j].grad.data());
    kernels::gemm(Trans::kNo, Trans::kYes, rows, dout, m, d_fused.data() + j * m, width,
                  fuse_in_w_[j].value.data(), m, dz.data(), dout, false);
    kernels::relu_backward(dz.size(), pre.data(), dz.data());
    if (refine_) {
      kernels::gemm(Trans::kNo, Trans::kYes, nodes, nodes, span, dz.data(), span,
                    tape.stream_in[j].data(), span, refine_->grad.data(), nodes, true);
    }
    kernels::gemm(Trans::kYes, Trans::kNo, nodes, span, nodes, tape.adjacency.data.data(),
                  nodes, dz.data(), span, dy.data(), span, false);
    const int delta = cfg_.identity_shift ? 0 : cfg_.deltas[j];
    kernels::axpy(dps.size(), 1.0, dy.data(), dps.data());
    if (df == 0) continue;
    for (int v = 0; v < h.nodes; ++v) {
      for (int t = 0; t < h.frames; ++t) {
        const double* g = dy.data() + (static_cast<std::size_t>(v) * h.frames + t) * dout;
        if (t - delta >= 0) {
          kernels::axpy(dout, 1.0, g, dpf.data() + (static_cast<std::size_t>(v) * h.frames + t - delta) * dout);
        }
        if (t + delta < h.frames) {
          kernels::axpy(dout, 1.0, g, dpb.data() + (static_cast<std::size_t>(v) * h.frames + t + delta) * dout);
        }
      }
    }
  }

  double* gw = gcn_w_.grad.data();
  const double* w = gcn_w_.value.data();
  kernels::gemm(Trans::kYes, Trans::kNo, ds, dout, rows, h.data.data(), din, dps.data(),
                dout, gw, dout, true);
  kernels::gemm(Trans::kNo, Trans::kYes, rows, ds, dout, dps.data(), dout, w, dout,
                dh.data.data(), din, true);
  if (df > 0) {
    kernels::gemm(Trans::kYes, Trans::kNo, df, dout, rows, h.data.data() + ds, din,
                  dpf.data(), dout, gw + ds * dout, dout, true);
    kernels::gemm(Trans::kYes, Trans::kNo, db, dout, rows, h.data.data() + ds + df, din,
                  dpb.data(), dout, gw + (ds + df) * dout, dout, true);
    kernels::gemm(Trans::kNo, Trans::kYes, rows, df, dout, dpf.data(), dout, w + ds * dout,
                  dout, dh.data.data() + ds, din, true);
    kernels::gemm(Trans::kNo, Trans::kYes, rows, db, dout, dpb.data(), dout,
                  w + (ds + df) * dout, dout, dh.data.data() + ds + df, din, true);
  }
  return dh;
}

// ---------------------------------------------------------------------------

UmegEncoder::UmegEncoder(const BlockConfig& cfg, nn::Matrix normalized_adjacency,
                         std::uint64_t seed)
    : cfg_(cfg), adjacency_(std::move(normalized_adjacency)) {
  cfg_.validate();
  require(adjacency_.rows == adjacency_.cols && adjacency_.rows > 0,
          "encoder: adjacency must be square and non-empty");
  nn::Rng rng(seed);
  const auto d0 = static_cast<std::size_t>(cfg_.widths.front());
  lift_w_ = nn::Parameter("lift.weight", {2, d0}, true);
  lift_b_ = nn::Parameter("lift.bias", {d0}, false);
  nn::init_uniform(lift_w_, 2, rng);
  nn::init_uniform(lift_b_, 2, rng);
  if (cfg_.lift_norm) {
    norm_gain_ = nn::Parameter("lift_norm.gain", {d0}, false);
    norm_bias_ = nn::Parameter("lift_norm.bias", {d0}, false);
    nn::init_constant(norm_gain_, 1.0);
  }
  int in = cfg_.widths.front();
  for (int i = 0; i < cfg_.num_blocks(); ++i) {
    const int out = cfg_.widths[static_cast<std::size_t>(i)];
    blocks_.emplace_back(i, in, out, cfg_, static_cast<int>(adjacency_.rows), rng);
    in = out;
  }
}

std::vector<nn::Parameter*> UmegEncoder::parameters() {
  std::vector<nn::Parameter*> ps{&lift_w_, &lift_b_};
  if (cfg_.lift_norm) {
    ps.push_back(&norm_gain_);
    ps.push_back(&norm_bias_);
  }
  for (UmegBlock& b : blocks_) {
    for (nn::Parameter* p : b.parameters()) ps.push_back(p);
  }
  return ps;
}

FrameEmbeddings UmegEncoder::forward(const graph::GraphSequence& seq) const {
  return forward(seq, nullptr);
}

FrameEmbeddings UmegEncoder::forward(const graph::GraphSequence& seq, Tape* tape) const {
  require(seq.nodes == node_count(), "encoder: sequence has " + std::to_string(seq.nodes) +
                                         " nodes, model expects " + std::to_string(node_count()));
  require(seq.frames >= 1, "encoder: empty sequence");
  const int nodes = seq.nodes;
  const int frames = seq.frames;
  const auto d0 = static_cast<std::size_t>(cfg_.widths.front());
  const std::size_t rows = static_cast<std::size_t>(nodes) * frames;

  std::vector<double> coords(rows * 2);
  for (int v = 0; v < nodes; ++v) {
    for (int t = 0; t < frames; ++t) {
      const std::size_t r = static_cast<std::size_t>(v) * frames + t;
      coords[2 * r] = seq.x(t, v);
      coords[2 * r + 1] = seq.y(t, v);
    }
  }
  NodeFeatures h(nodes, frames, cfg_.widths.front());
  nn::linear_forward(coords.data(), rows, 2, lift_w_, &lift_b_, h.data.data(), d0);
  std::vector<double> lifted, normed, inv_std;
  if (cfg_.lift_norm) {
    if (tape) lifted = h.data;
    normed.resize(rows * d0);
    inv_std.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double* x = h.data.data() + r * d0;
      double mean = 0.0;
      for (std::size_t c = 0; c < d0; ++c) mean += x[c];
      mean /= static_cast<double>(d0);
      double var = 0.0;
      for (std::size_t c = 0; c < d0; ++c) var += (x[c] - mean) * (x[c] - mean);
      var /= static_cast<double>(d0);
      const double rstd = 1.0 / std::sqrt(var + kNormEps);
      inv_std[r] = rstd;
      for (std::size_t c = 0; c < d0; ++c) {
        const double xh = (x[c] - mean) * rstd;
        normed[r * d0 + c] = xh;
        x[c] = norm_gain_.value[c] * xh + norm_bias_.value[c];
      }
    }
  }
  if (tape) {
    tape->blocks.assign(blocks_.size(), {});
    tape->frames = frames;
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i].forward(h, adjacency_, tape ? &tape->blocks[i] : nullptr);
  }

  FrameEmbeddings emb(frames, output_dim());
  const double inv_nodes = 1.0 / nodes;
  for (int v = 0; v < nodes; ++v) {
    for (int t = 0; t < frames; ++t) {
      kernels::axpy(static_cast<std::size_t>(emb.dim), inv_nodes, h.at(v, t), emb.row(t));
    }
  }
  if (tape) {
    tape->coords = std::move(coords);
    tape->lifted = std::move(lifted);
    tape->normed = std::move(normed);
    tape->inv_std = std::move(inv_std);
  }
  return emb;
}

void UmegEncoder::backward(const Tape& tape, const FrameEmbeddings& d_emb) {
  const int nodes = node_count();
  const int frames = tape.frames;
  require(d_emb.frames == frames && d_emb.dim == output_dim(),
          "encoder backward: gradient shape mismatch");
  NodeFeatures dh(nodes, frames, output_dim());
  const double inv_nodes = 1.0 / nodes;
  for (int v = 0; v < nodes; ++v) {
    for (int t = 0; t < frames; ++t) {
      kernels::axpy(static_cast<std::size_t>(d_emb.dim), inv_nodes, d_emb.row(t), dh.at(v, t));
    }
  }
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    dh = blocks_[i].backward(tape.blocks[i], dh);
  }
  const auto d0 = static_cast<std::size_t>(cfg_.widths.front());
  const std::size_t rows = dh.rows();
  if (cfg_.lift_norm) {
    std::vector<double> dxh(d0);
    for (std::size_t r = 0; r < rows; ++r) {
      double* g = dh.data.data() + r * d0;
      const double* xh = tape.normed.data() + r * d0;
      double mean_dxh = 0.0;
      double mean_dxh_xh = 0.0;
      for (std::size_t c = 0; c < d0; ++c) {
        norm_gain_.grad[c] += g[c] * xh[c];
        norm_bias_.grad[c] += g[c];
        dxh[c] = g[c] * norm_gain_.value[c];
        mean_dxh += dxh[c];
        mean_dxh_xh += dxh[c] * xh[c];
      }
      mean_dxh /= static_cast<double>(d0);
      mean_dxh_xh /= static_cast<double>(d0);
      for (std::size_t c = 0; c < d0; ++c) {
        g[c] = tape.inv_std[r] * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
      }
    }
  }
  nn::linear_backward(tape.coords.data(), rows, 2, lift_w_, &lift_b_, dh.data.data(), d0,
                      nullptr, false);
}

}  // namespace umeg::net
