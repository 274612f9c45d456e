#include <cmath>

#include "umeg/distiller.hpp"
#include "umeg/errors.hpp"
#include "umeg/kernels.hpp"

namespace umeg::distill {

using kernels::Trans;

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, nn::Rng& rng)
    : in_(in_channels), out_(out_channels) {
  const auto k = static_cast<std::size_t>(9 * in_channels);
  w_ = nn::Parameter(name + ".weight", {k, static_cast<std::size_t>(out_channels)}, true);
  b_ = nn::Parameter(name + ".bias", {static_cast<std::size_t>(out_channels)}, false);
  nn::init_uniform(w_, k, rng);
  nn::init_uniform(b_, k, rng);
}

std::vector<double> Conv2d::forward(const std::vector<double>& x, int frames, int height,
                                    int width, Tape* tape) const {
  require(x.size() == static_cast<std::size_t>(frames) * height * width * in_,
          "Conv2d: input size mismatch");
  const int ho = output_size(height);
  const int wo = output_size(width);
  const std::size_t k = static_cast<std::size_t>(9 * in_);
  const std::size_t rows = static_cast<std::size_t>(frames) * ho * wo;
  std::vector<double> patches(rows * k, 0.0);
  for (int f = 0; f < frames; ++f) {
    const double* src = x.data() + static_cast<std::size_t>(f) * height * width * in_;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double* row = patches.data() + ((static_cast<std::size_t>(f) * ho + oy) * wo + ox) * k;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * 2 - 1 + ky;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * 2 - 1 + kx;
            if (ix < 0 || ix >= width) continue;
            const double* px = src + (static_cast<std::size_t>(iy) * width + ix) * in_;
            std::copy(px, px + in_, row + (ky * 3 + kx) * in_);
          }
        }
      }
    }
  }
  std::vector<double> y(rows * static_cast<std::size_t>(out_));
  nn::linear_forward(patches.data(), rows, k, w_, &b_, y.data(), static_cast<std::size_t>(out_));
  if (tape) {
    tape->patches = std::move(patches);
    tape->frames = frames;
    tape->height = height;
    tape->width = width;
  }
  return y;
}

std::vector<double> Conv2d::backward(const Tape& tape, const std::vector<double>& dy,
                                     bool want_dx) {
  const int ho = output_size(tape.height);
  const int wo = output_size(tape.width);
  const std::size_t k = static_cast<std::size_t>(9 * in_);
  const std::size_t rows = static_cast<std::size_t>(tape.frames) * ho * wo;
  std::vector<double> dpatches;
  if (want_dx) dpatches.assign(rows * k, 0.0);
  nn::linear_backward(tape.patches.data(), rows, k, w_, &b_, dy.data(),
                      static_cast<std::size_t>(out_), want_dx ? dpatches.data() : nullptr, false);
  std::vector<double> dx;
  if (!want_dx) return dx;
  dx.assign(static_cast<std::size_t>(tape.frames) * tape.height * tape.width * in_, 0.0);
  for (int f = 0; f < tape.frames; ++f) {
    double* dst = dx.data() + static_cast<std::size_t>(f) * tape.height * tape.width * in_;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const double* row = dpatches.data() + ((static_cast<std::size_t>(f) * ho + oy) * wo + ox) * k;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * 2 - 1 + ky;
          if (iy < 0 || iy >= tape.height) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * 2 - 1 + kx;
            if (ix < 0 || ix >= tape.width) continue;
            double* px = dst + (static_cast<std::size_t>(iy) * tape.width + ix) * in_;
            const double* g = row + (ky * 3 + kx) * in_;
            for (int c = 0; c < in_; ++c) px[c] += g[c];
          }
        }
      }
    }
  }
  return dx;
}

Gru::Gru(std::string name, int input, int hidden, nn::Rng& rng) : input_(input), hidden_(hidden) {
  const auto in = static_cast<std::size_t>(input);
  const auto h3 = static_cast<std::size_t>(3 * hidden);
  wi_ = nn::Parameter(name + ".weight_ih", {in, h3}, true);
  bi_ = nn::Parameter(name + ".bias_ih", {h3}, false);
  wh_ = nn::Parameter(name + ".weight_hh", {static_cast<std::size_t>(hidden), h3}, true);
  bh_ = nn::Parameter(name + ".bias_hh", {h3}, false);
  for (nn::Parameter* p : parameters()) nn::init_uniform(*p, static_cast<std::size_t>(hidden), rng);
}

void Gru::forward(const double* x, int steps, bool reverse, double* out, std::size_t ld_out,
                  Tape* tape) const {
  const auto h = static_cast<std::size_t>(hidden_);
  const std::size_t h3 = 3 * h;
  const auto n_steps = static_cast<std::size_t>(steps);
  std::vector<double> gi(n_steps * h3);
  nn::linear_forward(x, n_steps, static_cast<std::size_t>(input_), wi_, &bi_, gi.data(), h3);
  std::vector<double> hs((n_steps + 1) * h, 0.0);
  std::vector<double> r(n_steps * h), z(n_steps * h), n(n_steps * h), hn(n_steps * h);
  std::vector<double> gh(h3);
  for (std::size_t s = 0; s < n_steps; ++s) {
    const std::size_t t = reverse ? n_steps - 1 - s : s;
    const double* hp = hs.data() + s * h;
    std::copy(bh_.value.begin(), bh_.value.end(), gh.begin());
    kernels::gemm(Trans::kNo, Trans::kNo, 1, h3, h, hp, h, wh_.value.data(), h3, gh.data(), h3, true);
    const double* g = gi.data() + t * h3;
    double* hnext = hs.data() + (s + 1) * h;
    for (std::size_t i = 0; i < h; ++i) {
      const double ri = nn::sigmoid(g[i] + gh[i]);
      const double zi = nn::sigmoid(g[h + i] + gh[h + i]);
      const double hni = gh[2 * h + i];
      const double ni = std::tanh(g[2 * h + i] + ri * hni);
      r[s * h + i] = ri;
      z[s * h + i] = zi;
      n[s * h + i] = ni;
      hn[s * h + i] = hni;
      hnext[i] = (1.0 - zi) * ni + zi * hp[i];
      out[t * ld_out + i] = hnext[i];
    }
  }
  if (tape) {
    tape->x.assign(x, x + n_steps * static_cast<std::size_t>(input_));
    tape->h = std::move(hs);
    tape->r = std::move(r);
    tape->z = std::move(z);
    tape->n = std::move(n);
    tape->hn = std::move(hn);
    tape->steps = steps;
    tape->reverse = reverse;
  }
}

void Gru::backward(const Tape& tape, const double* dy, std::size_t ld_dy, double* dx) {
  const auto h = static_cast<std::size_t>(hidden_);
  const std::size_t h3 = 3 * h;
  const auto n_steps = static_cast<std::size_t>(tape.steps);
  std::vector<double> dgi(n_steps * h3, 0.0);
  std::vector<double> dh_next(h, 0.0), dh(h), dgh(h3);
  for (std::size_t s = n_steps; s-- > 0;) {
    const std::size_t t = tape.reverse ? n_steps - 1 - s : s;
    const double* hp = tape.h.data() + s * h;
    const double* r = tape.r.data() + s * h;
    const double* z = tape.z.data() + s * h;
    const double* n = tape.n.data() + s * h;
    const double* hn = tape.hn.data() + s * h;
    double* g = dgi.data() + t * h3;
    for (std::size_t i = 0; i < h; ++i) {
      const double d = dy[t * ld_dy + i] + dh_next[i];
      const double dn_pre = d * (1.0 - z[i]) * (1.0 - n[i] * n[i]);
      const double dz_pre = d * (hp[i] - n[i]) * z[i] * (1.0 - z[i]);
      const double dr_pre = dn_pre * hn[i] * r[i] * (1.0 - r[i]);
      g[i] = dr_pre;
      g[h + i] = dz_pre;
      g[2 * h + i] = dn_pre;
      dgh[i] = dr_pre;
      dgh[h + i] = dz_pre;
      dgh[2 * h + i] = dn_pre * r[i];
      dh[i] = d * z[i];
    }
    kernels::gemm(Trans::kYes, Trans::kNo, h, h3, 1, hp, h, dgh.data(), h3, wh_.grad.data(), h3, true);
    kernels::axpy(h3, 1.0, dgh.data(), bh_.grad.data());
    kernels::gemm(Trans::kNo, Trans::kYes, 1, h, h3, dgh.data(), h3, wh_.value.data(), h3, dh.data(), h, true);
    dh_next = dh;
  }
  nn::linear_backward(tape.x.data(), n_steps, static_cast<std::size_t>(input_), wi_, &bi_,
                      dgi.data(), h3, dx, true);
}

}  // namespace umeg::distill
