#pragma once

// Minimal building blocks shared by the graph teacher and the raster student:
// named parameters with gradients, dense row-major helpers, initialisation,
// and the AdamW optimizer.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace umeg::nn {

using Rng = std::mt19937_64;

// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
};

struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> value;
  std::vector<double> grad;
  // Weight decay applies to matrices, not to biases and gains.
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> s, bool decay_weights);

  std::size_t size() const { return value.size(); }
  void zero_grad();
};

using ManifestEntry = std::pair<std::string, std::vector<std::size_t>>;
using Manifest = std::vector<ManifestEntry>;

Manifest manifest_of(std::span<Parameter* const> params);
std::size_t manifest_total(const Manifest& m);

// FNV-1a over the raw bytes of every value, in manifest order.
std::uint64_t checksum(std::span<Parameter* const> params);

void zero_grads(std::span<Parameter* const> params);

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform(Parameter& p, std::size_t fan_in, Rng& rng);
void init_constant(Parameter& p, double v);

// Y[rows×out] (+)= X[rows×in] · W[in×out] + b
void linear_forward(const double* x, std::size_t rows, std::size_t in,
                    const Parameter& w, const Parameter* b, double* y,
                    std::size_t ldy, bool accumulate = false);
// Accumulates dW, db; writes (or accumulates) dX when dx != nullptr.
void linear_backward(const double* x, std::size_t rows, std::size_t in,
                     Parameter& w, Parameter* b, const double* dy,
                     std::size_t lddy, double* dx, bool accumulate_dx);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg = {});

  void step(double lr);
  std::size_t steps() const { return step_; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

// Copies of parameter values, used for best-checkpoint selection.
using Snapshot = std::vector<std::vector<double>>;
Snapshot snapshot(std::span<Parameter* const> params);
void restore(std::span<Parameter* const> params, const Snapshot& snap);

inline double sigmoid(double z) {
  if (z >= 0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace umeg::nn
