#include <algorithm>
#include <cmath>

#include "umeg/distiller.hpp"
#include "umeg/errors.hpp"

namespace umeg::distill {

void RasterConfig::validate() const {
  if (height < 8 || width < 8 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("raster: height and width must be multiples of 8, at least 8");
  }
  if (!(sigma > 0.0)) throw ConfigError("raster: sigma must be positive");
}

namespace {

void splat(double* frame, int height, int width, int ch, double x, double y, double sigma) {
  const double px = x * width;
  const double py = y * height;
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  const int i0 = std::max(0, static_cast<int>(std::floor(py)) - r);
  const int i1 = std::min(height - 1, static_cast<int>(std::ceil(py)) + r);
  const int j0 = std::max(0, static_cast<int>(std::floor(px)) - r);
  const int j1 = std::min(width - 1, static_cast<int>(std::ceil(px)) + r);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int i = i0; i <= i1; ++i) {
    const double dy = i - py;
    for (int j = j0; j <= j1; ++j) {
      const double dx = j - px;
      const double v = std::exp(-(dx * dx + dy * dy) * inv);
      double& cell = frame[(static_cast<std::size_t>(i) * width + j) * kRasterChannels + ch];
      cell = std::max(cell, v);
    }
  }
}

}  // namespace

RasterClip render_raster(const data::KeypointClip& clip, const RasterConfig& cfg, int start,
                         int length) {
  require(start >= 0 && length >= 1, "render_raster: bad frame range");
  RasterClip r;
  r.frames = length;
  r.height = cfg.height;
  r.width = cfg.width;
  const std::size_t frame_size = static_cast<std::size_t>(cfg.height) * cfg.width * kRasterChannels;
  r.data.assign(frame_size * static_cast<std::size_t>(length), 0.0);
  const data::EntityLayout& lay = clip.layout;
  const int person_nodes = lay.num_persons * lay.joints_per_person;
  for (int t = 0; t < length && start + t < clip.length(); ++t) {
    const data::KeypointFrame& f = clip.frames[static_cast<std::size_t>(start + t)];
    double* frame = r.data.data() + frame_size * static_cast<std::size_t>(t);
    for (int v = 0; v < static_cast<int>(f.points.size()); ++v) {
      if (!f.detected[static_cast<std::size_t>(v)]) continue;
      const int ch = v < person_nodes ? 0 : (lay.has_ball && v == lay.ball_node() ? 1 : 2);
      splat(frame, cfg.height, cfg.width, ch, f.points[static_cast<std::size_t>(v)].x,
            f.points[static_cast<std::size_t>(v)].y, cfg.sigma);
    }
  }
  return r;
}

RasterClip render_raster(const data::KeypointClip& clip, const RasterConfig& cfg) {
  return render_raster(clip, cfg, 0, std::max(1, clip.length()));
}

double feature_matching_loss(const net::FrameEmbeddings& a, const net::FrameEmbeddings& b,
                             net::FrameEmbeddings* grad_b) {
  require(a.frames == b.frames && a.dim == b.dim, "feature_matching_loss: shape mismatch");
  require(a.frames >= 1, "feature_matching_loss: empty input");
  const double inv_t = 1.0 / a.frames;
  if (grad_b) *grad_b = net::FrameEmbeddings(b.frames, b.dim);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = b.data[i] - a.data[i];
    sum += d * d;
    if (grad_b) grad_b->data[i] = 2.0 * d * inv_t;
  }
  return sum * inv_t;
}

}  // namespace umeg::distill
