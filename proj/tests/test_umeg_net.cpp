#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "umeg/graph_builder.hpp"
#include "umeg/umeg_net.hpp"

using namespace umeg;
using namespace umeg::net;

namespace {

nn::Matrix ring_adjacency(int n) {
  nn::Matrix a(static_cast<std::size_t>(n), static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    a(i, (i + 1) % n) = a((i + 1) % n, i) = 1.0;
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

NodeFeatures random_features(int v, int t, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  NodeFeatures h(v, t, d);
  for (double& x : h.data) x = n(rng);
  return h;
}

void jitter(std::span<nn::Parameter* const> params, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (nn::Parameter* p : params) {
    for (double& x : p->value) x += u(rng);
  }
}

}  // namespace

TEST_CASE("channel split arithmetic") {
  auto s = channel_split(64, 0.125);
  CHECK(s.static_channels == 48);
  CHECK(s.forward_channels == 8);
  CHECK(s.backward_channels == 8);
  s = channel_split(8, 0.125);
  CHECK((s.static_channels == 6 && s.forward_channels == 1 && s.backward_channels == 1));
  s = channel_split(10, 0.125);
  CHECK((s.static_channels == 8 && s.forward_channels == 1 && s.backward_channels == 1));
  s = channel_split(4, 0.125);
  CHECK(s.degenerate);
  CHECK(s.static_channels == 4);
}

TEST_CASE("split then concat is the identity") {
  nn::Matrix f(5, 16);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<double>(i) * 0.5 - 3;
  const ChannelParts p = split_frame(f, 0.125);
  CHECK(p.static_part.cols == 12);
  CHECK(p.forward_part.cols == 2);
  CHECK(concat_parts(p).data == f.data);
}

TEST_CASE("shift streams index arithmetic and zero padding") {
  const NodeFeatures h = random_features(3, 5, 8, 11);  // split (6,1,1)
  const NodeFeatures s = shift_streams(h, 0.125, 2);
  for (int v = 0; v < 3; ++v) {
    CHECK(s.at(v, 2)[6] == h.at(v, 0)[6]);
    CHECK(s.at(v, 2)[7] == h.at(v, 4)[7]);
    CHECK(s.at(v, 0)[6] == 0.0);
    CHECK(s.at(v, 1)[6] == 0.0);
    CHECK(s.at(v, 4)[7] == 0.0);
    for (int t = 0; t < 5; ++t) {
      for (int c = 0; c < 6; ++c) CHECK(s.at(v, t)[c] == h.at(v, t)[c]);
    }
  }
  const NodeFeatures far = shift_streams(h, 0.125, 9);
  for (int v = 0; v < 3; ++v) {
    for (int t = 0; t < 5; ++t) {
      CHECK(far.at(v, t)[6] == 0.0);
      CHECK(far.at(v, t)[7] == 0.0);
    }
  }
}

TEST_CASE("gcn layer matches a dense triple product") {
  const int v = 5, t = 3, d = 4;
  const NodeFeatures h = random_features(v, t, d, 5);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  nn::Matrix a(v, v), w(d, d);
  for (double& x : a.data) x = n(rng);
  for (double& x : w.data) x = n(rng);
  const NodeFeatures z = gcn_layer(h, a, w);
  for (int f = 0; f < t; ++f) {
    for (int i = 0; i < v; ++i) {
      for (int c = 0; c < d; ++c) {
        double s = 0.0;
        for (int j = 0; j < v; ++j) {
          for (int p = 0; p < d; ++p) s += a(i, j) * h.at(j, f)[p] * w(p, c);
        }
        CHECK(z.at(i, f)[c] == doctest::Approx(std::max(s, 0.0)).epsilon(1e-12));
      }
    }
  }
  // identity case and zero input
  nn::Matrix eye_v(v, v), eye_d(d, d);
  for (int i = 0; i < v; ++i) eye_v(i, i) = 1;
  for (int i = 0; i < d; ++i) eye_d(i, i) = 1;
  NodeFeatures pos = h;
  for (double& x : pos.data) x = std::abs(x);
  CHECK(gcn_layer(pos, eye_v, eye_d).data == pos.data);
  const NodeFeatures zero(v, t, d);
  for (double x : gcn_layer(zero, a, w).data) CHECK(x == 0.0);
}

TEST_CASE("block parameter count for a single small block") {
  BlockConfig cfg = BlockConfig::uniform(4, 1);
  cfg.refine_topology = false;
  nn::Rng rng(1);
  UmegBlock block(0, 4, 4, cfg, 6, rng);
  CHECK(block.fuse_dim() == 1);
  const auto params = block.parameters();
  CHECK(nn::manifest_total(nn::manifest_of(params)) == 47);
}

TEST_CASE("fusion widths at d=64 with three offsets") {
  BlockConfig cfg = BlockConfig::uniform(64, 1);
  nn::Rng rng(1);
  UmegBlock block(0, 64, 64, cfg, 6, rng);
  CHECK(block.fuse_dim() == 21);
  CHECK(block.fuse_out_weight().shape == std::vector<std::size_t>{63, 64});
}

TEST_CASE("fast block path matches the literal shift path") {
  for (bool identity : {false, true}) {
    for (int din : {8, 16}) {
      BlockConfig cfg = BlockConfig::uniform(16, 1);
      cfg.identity_shift = identity;
      nn::Rng rng(4);
      UmegBlock block(0, din, 16, cfg, 6, rng);
      auto ps = block.parameters();
      jitter(ps, 8, 0.1);
      const NodeFeatures h = random_features(6, 9, din, 13);
      const nn::Matrix a = ring_adjacency(6);
      const NodeFeatures fast = block.forward(h, a, nullptr);
      const NodeFeatures ref = block.forward_reference(h, a);
      REQUIRE(fast.data.size() == ref.data.size());
      for (std::size_t i = 0; i < fast.data.size(); ++i) {
        CHECK(fast.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("zeroed output projection leaves the residual") {
  BlockConfig cfg = BlockConfig::uniform(8, 1);
  nn::Rng rng(2);
  UmegBlock block(0, 8, 8, cfg, 6, rng);
  std::fill(block.fuse_out_weight().value.begin(), block.fuse_out_weight().value.end(), 0.0);
  std::fill(block.fuse_out_bias().value.begin(), block.fuse_out_bias().value.end(), 0.0);
  const NodeFeatures h = random_features(6, 7, 8, 3);
  CHECK(block.forward(h, ring_adjacency(6), nullptr).data == h.data);
}

TEST_CASE("single frame: shifted channels carry nothing") {
  BlockConfig cfg = BlockConfig::uniform(16, 1);
  nn::Rng rng(2);
  UmegBlock block(0, 16, 16, cfg, 6, rng);
  NodeFeatures h = random_features(6, 1, 16, 3);
  const NodeFeatures base = block.forward(h, ring_adjacency(6), nullptr);
  // perturbing the fwd/bwd channels changes only the residual path
  NodeFeatures h2 = h;
  for (int v = 0; v < 6; ++v) {
    for (int c = 12; c < 16; ++c) h2.at(v, 0)[c] += 1.0;
  }
  const NodeFeatures out2 = block.forward(h2, ring_adjacency(6), nullptr);
  for (int v = 0; v < 6; ++v) {
    for (int c = 0; c < 16; ++c) {
      CHECK(out2.at(v, 0)[c] - h2.at(v, 0)[c] == doctest::Approx(base.at(v, 0)[c] - h.at(v, 0)[c]));
    }
  }
}

TEST_CASE("encoder gradients match central differences") {
  for (bool refine : {false, true}) {
    for (bool norm : {false, true}) {
      BlockConfig cfg;
      cfg.widths = {8, 8};
      cfg.deltas = {1, 2};
      cfg.refine_topology = refine;
      cfg.lift_norm = norm;
      UmegEncoder enc(cfg, ring_adjacency(6), 17);
      auto params = enc.parameters();
      jitter(params, 23, 0.05);
      const graph::GraphSequence seq = random_sequence(5, 6, 31);
      std::mt19937_64 rng(41);
      std::normal_distribution<double> n(0.0, 1.0);
      FrameEmbeddings probe(5, 8);
      for (double& x : probe.data) x = n(rng);
      auto loss = [&] {
        const FrameEmbeddings e = enc.forward(seq);
        double s = 0.0;
        for (std::size_t i = 0; i < e.data.size(); ++i) s += e.data[i] * probe.data[i] + 0.5 * e.data[i] * e.data[i];
        return s;
      };
      auto analytic = [&] {
        UmegEncoder::Tape tape;
        const FrameEmbeddings e = enc.forward(seq, &tape);
        FrameEmbeddings g(5, 8);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = probe.data[i] + e.data[i];
        enc.backward(tape, g);
      };
      const auto r = testing::grad_check(params, loss, analytic);
      INFO("refine=" << refine << " norm=" << norm << " worst " << r.worst);
      CHECK(r.checked > 100);
      CHECK(r.max_rel_error <= 1e-4);
    }
  }
}

TEST_CASE("manifest does not depend on the shift") {
  auto manifest = [](double alpha, bool identity) {
    BlockConfig cfg;
    cfg.widths = {16, 16, 32};
    cfg.shift_fraction = alpha;
    cfg.identity_shift = identity;
    UmegEncoder enc(cfg, ring_adjacency(6), 1);
    return nn::manifest_of(enc.parameters());
  };
  const auto base = manifest(0.125, false);
  CHECK(manifest(1.0 / 16, false) == base);
  CHECK(manifest(0.25, false) == base);
  CHECK(manifest(0.125, true) == base);
}

TEST_CASE("receptive field is bounded by 4L") {
  BlockConfig cfg;
  cfg.widths = {8, 8};
  UmegEncoder enc(cfg, ring_adjacency(6), 3);
  jitter(enc.parameters(), 5, 0.05);
  const int frames = 40;
  const graph::GraphSequence seq = random_sequence(frames, 6, 8);
  const FrameEmbeddings base = enc.forward(seq);
  const int t0 = 20;
  graph::GraphSequence moved = seq;
  for (int v = 0; v < 6; ++v) moved.coords[(static_cast<std::size_t>(t0) * 6 + v) * 2] += 0.3;
  const FrameEmbeddings out = enc.forward(moved);
  int changed_far = 0, changed_near = 0;
  for (int t = 0; t < frames; ++t) {
    bool diff = false;
    for (int c = 0; c < 8; ++c) diff |= out.row(t)[c] != base.row(t)[c];
    if (std::abs(t - t0) > 8) changed_far += diff;
    else changed_near += diff;
  }
  CHECK(changed_far == 0);
  CHECK(changed_near > 0);
}

TEST_CASE("forward is deterministic and finite") {
  BlockConfig cfg;
  cfg.widths = {8, 16};
  UmegEncoder enc(cfg, ring_adjacency(6), 3);
  const graph::GraphSequence seq = random_sequence(12, 6, 8);
  const FrameEmbeddings a = enc.forward(seq);
  const FrameEmbeddings b = enc.forward(seq);
  CHECK(a.data == b.data);
  for (double x : a.data) CHECK(std::isfinite(x));
  CHECK(a.dim == 16);
}

TEST_CASE("zero input: interior frames agree") {
  BlockConfig cfg;
  cfg.widths = {8, 8};
  UmegEncoder enc(cfg, ring_adjacency(6), 3);
  graph::GraphSequence seq = random_sequence(30, 6, 8);
  std::fill(seq.coords.begin(), seq.coords.end(), 0.0);
  const FrameEmbeddings e = enc.forward(seq);
  for (int t = 9; t < 21; ++t) {
    for (int c = 0; c < 8; ++c) CHECK(e.row(t)[c] == doctest::Approx(e.row(15)[c]).epsilon(1e-12));
  }
}
