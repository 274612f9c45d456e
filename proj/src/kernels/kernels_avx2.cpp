// Compiled with -mavx2 -mfma. Nothing in this file may run unless the
// dispatcher has confirmed CPU support.

#include "umeg/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#include <cmath>
#include <vector>

namespace umeg::kernels {
namespace {

// Computes rows [i, i+R) of C against a packed row-major B (k×n, ld = ldb).
template <int R>
void gemm_rows(std::size_t i, std::size_t n, std::size_t k, const double* a,
               std::size_t a_row, std::size_t a_col, const double* b,
               std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc[R][2];
    for (int r = 0; r < R; ++r) {
      acc[r][0] = _mm256_setzero_pd();
      acc[r][1] = _mm256_setzero_pd();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * ldb + j;
      const __m256d b0 = _mm256_loadu_pd(bp);
      const __m256d b1 = _mm256_loadu_pd(bp + 4);
      for (int r = 0; r < R; ++r) {
        const __m256d av = _mm256_set1_pd(a[(i + r) * a_row + p * a_col]);
        acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
        acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
      }
    }
    for (int r = 0; r < R; ++r) {
      double* cp = c + (i + r) * ldc + j;
      if (accumulate) {
        acc[r][0] = _mm256_add_pd(acc[r][0], _mm256_loadu_pd(cp));
        acc[r][1] = _mm256_add_pd(acc[r][1], _mm256_loadu_pd(cp + 4));
      }
      _mm256_storeu_pd(cp, acc[r][0]);
      _mm256_storeu_pd(cp + 4, acc[r][1]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_setzero_pd();
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
      for (int r = 0; r < R; ++r) {
        const __m256d av = _mm256_set1_pd(a[(i + r) * a_row + p * a_col]);
        acc[r] = _mm256_fmadd_pd(av, b0, acc[r]);
      }
    }
    for (int r = 0; r < R; ++r) {
      double* cp = c + (i + r) * ldc + j;
      if (accumulate) acc[r] = _mm256_add_pd(acc[r], _mm256_loadu_pd(cp));
      _mm256_storeu_pd(cp, acc[r]);
    }
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        s = std::fma(a[(i + r) * a_row + p * a_col], b[p * ldb + j], s);
      }
      double* cp = c + (i + r) * ldc + j;
      *cp = accumulate ? *cp + s : s;
    }
  }
}

void gemm_avx2(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
               const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  const double* bp = b;
  std::size_t ldbp = ldb;
  thread_local std::vector<double> packed;
  if (tb == Trans::kYes) {
    packed.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      const double* src = b + j * ldb;
      for (std::size_t p = 0; p < k; ++p) packed[p * n + j] = src[p];
    }
    bp = packed.data();
    ldbp = n;
  }
  const std::size_t a_row = ta == Trans::kNo ? lda : 1;
  const std::size_t a_col = ta == Trans::kNo ? 1 : lda;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    gemm_rows<4>(i, n, k, a, a_row, a_col, bp, ldbp, c, ldc, accumulate);
  }
  for (; i < m; ++i) {
    gemm_rows<1>(i, n, k, a, a_row, a_col, bp, ldbp, c, ldc, accumulate);
  }
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

void relu_avx2(std::size_t n, const double* x, double* y) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_avx2(std::size_t n, const double* pre, double* g) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(g + i, _mm256_and_pd(mask, _mm256_loadu_pd(g + i)));
  }
  for (; i < n; ++i) {
    if (!(pre[i] > 0.0)) g[i] = 0.0;
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable t{gemm_avx2, axpy_avx2, dot_avx2, relu_avx2,
                             relu_backward_avx2};
  return t;
}

}  // namespace umeg::kernels

#else

namespace umeg::kernels {

// No vector variant on this architecture; the dispatcher never selects it.
const KernelTable& avx2_table() { return scalar_table(); }

}  // namespace umeg::kernels

#endif
