#pragma once

// UMEG encoder: input lift, stacked blocks of spatial graph convolution with a
// bidirectional multi-scale temporal channel shift, and node mean-pooling to
// per-frame embeddings.
//
// Node features are stored node-major, |V|×T×d, so that a (|V|·T)×d view
// feeds channel projections and a |V|×(T·d) view feeds the adjacency product.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "umeg/graph_builder.hpp"
#include "umeg/nn.hpp"

namespace umeg::net {

struct BlockConfig {
  // One entry per block; consecutive entries that differ get a linear
  // residual projection.
  std::vector<int> widths{64, 64, 128, 128};
  double shift_fraction = 0.125;
  std::vector<int> deltas{1, 2, 4};
  bool refine_topology = true;
  bool lift_norm = true;
  // Ablation switch: replaces the temporal shift by the identity map.
  bool identity_shift = false;

  int num_blocks() const { return static_cast<int>(widths.size()); }
  int max_delta() const { return deltas.empty() ? 0 : deltas.back(); }
  // Throws ConfigError.
  void validate() const;

  static BlockConfig uniform(int width, int blocks);
};

struct ChannelSplit {
  int static_channels = 0;
  int forward_channels = 0;
  int backward_channels = 0;
  // floor(alpha·d) == 0: every channel stays static.
  bool degenerate = false;
};

// forward = backward = floor(alpha·d), static takes the remainder. Emits a
// warning on stderr for the degenerate case.
ChannelSplit channel_split(int channels, double alpha);

struct NodeFeatures {
  int nodes = 0;
  int frames = 0;
  int channels = 0;
  std::vector<double> data;

  NodeFeatures() = default;
  NodeFeatures(int v, int t, int d)
      : nodes(v), frames(t), channels(d),
        data(static_cast<std::size_t>(v) * t * d, 0.0) {}

  std::size_t rows() const { return static_cast<std::size_t>(nodes) * frames; }
  double* at(int v, int t) {
    return data.data() + (static_cast<std::size_t>(v) * frames + t) * channels;
  }
  const double* at(int v, int t) const {
    return data.data() + (static_cast<std::size_t>(v) * frames + t) * channels;
  }
};

// Per-frame spatial graph convolution, ReLU(A·H_t·W) for every t.
NodeFeatures gcn_layer(const NodeFeatures& h, const nn::Matrix& adjacency,
                       const nn::Matrix& weight);

struct ChannelParts {
  nn::Matrix static_part;
  nn::Matrix forward_part;
  nn::Matrix backward_part;
};

// Splits one frame's |V|×d features into static, forward and backward parts.
ChannelParts split_frame(const nn::Matrix& frame, double alpha);
nn::Matrix concat_parts(const ChannelParts& parts);

// Output frame t = [static_t ‖ fwd_{t−Δ} ‖ bwd_{t+Δ}], zero outside [0, T).
NodeFeatures shift_streams(const NodeFeatures& h, double alpha, int delta);

class UmegBlock {
 public:
  UmegBlock(int index, int in_dim, int out_dim, const BlockConfig& cfg,
            int node_count, nn::Rng& rng);

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  int fuse_dim() const { return fuse_dim_; }
  const ChannelSplit& split() const { return split_; }

  std::vector<nn::Parameter*> parameters();

  struct Tape {
    NodeFeatures input;
    nn::Matrix adjacency;  // normalized adjacency plus refinement
    std::vector<double> proj_static, proj_forward, proj_backward;
    std::vector<std::vector<double>> stream_in;   // A-input per Δ
    std::vector<std::vector<double>> stream_pre;  // pre-ReLU GCN output per Δ
    std::vector<double> fused;                    // U, pre-ReLU
  };

  // Projects once per channel group and shifts the projections; matches
  // forward_reference() up to summation order.
  NodeFeatures forward(const NodeFeatures& h, const nn::Matrix& adjacency,
                       Tape* tape) const;
  // Literal form: shift, then ReLU(A·H̃·W) per Δ, then fuse.
  NodeFeatures forward_reference(const NodeFeatures& h,
                                 const nn::Matrix& adjacency) const;
  // Accumulates parameter gradients; returns dL/dH.
  NodeFeatures backward(const Tape& tape, const NodeFeatures& d_out);

  nn::Parameter& gcn_weight() { return gcn_w_; }
  nn::Parameter& fuse_out_weight() { return fuse_out_w_; }
  nn::Parameter& fuse_out_bias() { return fuse_out_b_; }
  nn::Parameter* refinement() { return refine_ ? &*refine_ : nullptr; }

 private:
  nn::Matrix effective_adjacency(const nn::Matrix& adjacency) const;
  NodeFeatures fuse(const NodeFeatures& h, std::span<const std::vector<double>> streams,
                    Tape* tape) const;

  BlockConfig cfg_;
  int in_dim_;
  int out_dim_;
  int fuse_dim_;
  int node_count_;
  ChannelSplit split_;
  nn::Parameter gcn_w_;
  std::vector<nn::Parameter> fuse_in_w_;
  std::vector<nn::Parameter> fuse_in_b_;
  nn::Parameter fuse_out_w_;
  nn::Parameter fuse_out_b_;
  std::optional<nn::Parameter> residual_w_;
  std::optional<nn::Parameter> refine_;
};

// T×d per-frame features.
struct FrameEmbeddings {
  int frames = 0;
  int dim = 0;
  std::vector<double> data;

  FrameEmbeddings() = default;
  FrameEmbeddings(int t, int d)
      : frames(t), dim(d), data(static_cast<std::size_t>(t) * d, 0.0) {}
  double* row(int t) { return data.data() + static_cast<std::size_t>(t) * dim; }
  const double* row(int t) const {
    return data.data() + static_cast<std::size_t>(t) * dim;
  }
};

class UmegEncoder {
 public:
  UmegEncoder(const BlockConfig& cfg, nn::Matrix normalized_adjacency,
              std::uint64_t seed);

  const BlockConfig& config() const { return cfg_; }
  int node_count() const { return static_cast<int>(adjacency_.rows); }
  int output_dim() const { return cfg_.widths.back(); }
  const nn::Matrix& adjacency() const { return adjacency_; }
  std::vector<UmegBlock>& blocks() { return blocks_; }

  std::vector<nn::Parameter*> parameters();

  struct Tape {
    std::vector<double> coords;  // (|V|·T)×2
    std::vector<double> lifted;  // pre-normalisation
    std::vector<double> normed;  // x̂
    std::vector<double> inv_std;
    std::vector<UmegBlock::Tape> blocks;
    int frames = 0;
  };

  FrameEmbeddings forward(const graph::GraphSequence& seq) const;
  FrameEmbeddings forward(const graph::GraphSequence& seq, Tape* tape) const;
  void backward(const Tape& tape, const FrameEmbeddings& d_emb);

 private:
  BlockConfig cfg_;
  nn::Matrix adjacency_;
  nn::Parameter lift_w_;
  nn::Parameter lift_b_;
  nn::Parameter norm_gain_;
  nn::Parameter norm_bias_;
  std::vector<UmegBlock> blocks_;
};

}  // namespace umeg::net
