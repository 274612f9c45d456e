#include <algorithm>
#include <vector>

#include "umeg/kernels.hpp"

namespace umeg::kernels {
namespace {

void gemm_scalar(Trans ta, Trans tb, std::size_t m, std::size_t n,
                 std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 bool accumulate) {
  const std::size_t a_row = ta == Trans::kNo ? lda : 1;
  const std::size_t a_col = ta == Trans::kNo ? 1 : lda;
  thread_local std::vector<double> row;
  row.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * a_row + p * a_col];
      if (tb == Trans::kNo) {
        const double* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) row[j] += av * b[j * ldb + p];
      }
    }
    double* crow = c + i * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] += row[j];
    } else {
      std::copy(row.begin(), row.end(), crow);
    }
  }
}

void axpy_scalar(std::size_t n, double alpha, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void relu_scalar(std::size_t n, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(std::size_t n, const double* pre, double* g) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!(pre[i] > 0.0)) g[i] = 0.0;
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{gemm_scalar, axpy_scalar, dot_scalar, relu_scalar,
                             relu_backward_scalar};
  return t;
}

}  // namespace umeg::kernels
