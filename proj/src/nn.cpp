#include "umeg/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "umeg/errors.hpp"
#include "umeg/kernels.hpp"

namespace umeg::nn {

using kernels::Trans;

Parameter::Parameter(std::string n, std::vector<std::size_t> s,
                     bool decay_weights)
    : name(std::move(n)), shape(std::move(s)), decay(decay_weights) {
  const std::size_t count = std::accumulate(shape.begin(), shape.end(),
                                            std::size_t{1}, std::multiplies<>());
  value.assign(count, 0.0);
  grad.assign(count, 0.0);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Manifest manifest_of(std::span<Parameter* const> params) {
  Manifest m;
  m.reserve(params.size());
  for (const Parameter* p : params) m.emplace_back(p->name, p->shape);
  return m;
}

std::size_t manifest_total(const Manifest& m) {
  std::size_t total = 0;
  for (const auto& [name, shape] : m) {
    total += std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                             std::multiplies<>());
  }
  return total;
}

std::uint64_t checksum(std::span<Parameter* const> params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    const std::size_t n = p->value.size() * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

void init_uniform(Parameter& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : p.value) v = dist(rng);
}

void init_constant(Parameter& p, double v) {
  std::fill(p.value.begin(), p.value.end(), v);
}

void linear_forward(const double* x, std::size_t rows, std::size_t in,
                    const Parameter& w, const Parameter* b, double* y,
                    std::size_t ldy, bool accumulate) {
  require(w.shape.size() == 2 && w.shape[0] == in, "linear: weight shape mismatch for " + w.name);
  const std::size_t out = w.shape[1];
  kernels::gemm(Trans::kNo, Trans::kNo, rows, out, in, x, in, w.value.data(),
                out, y, ldy, accumulate);
  if (b != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
      kernels::axpy(out, 1.0, b->value.data(), y + r * ldy);
    }
  }
}

void linear_backward(const double* x, std::size_t rows, std::size_t in,
                     Parameter& w, Parameter* b, const double* dy,
                     std::size_t lddy, double* dx, bool accumulate_dx) {
  const std::size_t out = w.shape[1];
  // dW += Xᵀ·dY
  kernels::gemm(Trans::kYes, Trans::kNo, in, out, rows, x, in, dy, lddy,
                w.grad.data(), out, true);
  if (b != nullptr) {
    for (std::size_t r = 0; r < rows; ++r) {
      kernels::axpy(out, 1.0, dy + r * lddy, b->grad.data());
    }
  }
  if (dx != nullptr) {
    // dX = dY·Wᵀ
    kernels::gemm(Trans::kNo, Trans::kYes, rows, in, out, dy, lddy,
                  w.value.data(), out, dx, in, accumulate_dx);
  }
}

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= decay * p.value[j];
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

Snapshot snapshot(std::span<Parameter* const> params) {
  Snapshot s;
  s.reserve(params.size());
  for (const Parameter* p : params) s.push_back(p->value);
  return s;
}

void restore(std::span<Parameter* const> params, const Snapshot& snap) {
  require(snap.size() == params.size(), "snapshot does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(snap[i].size() == params[i]->value.size(), "snapshot size mismatch");
    params[i]->value = snap[i];
  }
}

}  // namespace umeg::nn
