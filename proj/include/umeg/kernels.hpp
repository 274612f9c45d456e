#pragma once

// Dense arithmetic kernels used by every model in the toolkit.
//
// Each kernel has a scalar reference implementation and, where the CPU
// supports it, an AVX2+FMA variant. The variant is chosen once per process
// (first call to active_isa()) and can be forced with UMEG_SIMD=scalar|avx2.
// Both variants accumulate in the same order, so results differ only by the
// rounding of fused multiply-adds.

#include <cstddef>
#include <string_view>

namespace umeg::kernels {

enum class Isa { kScalar, kAvx2 };

enum class Trans { kNo, kYes };

std::string_view isa_name(Isa isa);

// True when the running CPU can execute the given variant.
bool isa_supported(Isa isa);

// The variant used by the free functions below.
Isa active_isa();

// Overrides the dispatch choice. Throws std::invalid_argument if the CPU
// cannot run `isa`. Intended for tests and benchmarks.
void set_active_isa(Isa isa);

struct KernelTable {
  // C[m×n] (+)= op(A)[m×k] · op(B)[k×n], row-major with leading dimensions.
  void (*gemm)(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
               const double* a, std::size_t lda, const double* b,
               std::size_t ldb, double* c, std::size_t ldc, bool accumulate);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  double (*dot)(std::size_t n, const double* x, const double* y);
  // y = max(x, 0); x and y may alias.
  void (*relu)(std::size_t n, const double* x, double* y);
  // g[i] = pre[i] > 0 ? g[i] : 0
  void (*relu_backward)(std::size_t n, const double* pre, double* g);
};

const KernelTable& scalar_table();
// Only valid when isa_supported(Isa::kAvx2).
const KernelTable& avx2_table();
const KernelTable& table(Isa isa);

inline const KernelTable& active() { return table(active_isa()); }

inline void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n,
                 std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 bool accumulate) {
  active().gemm(ta, tb, m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  active().axpy(n, alpha, x, y);
}

inline double dot(std::size_t n, const double* x, const double* y) {
  return active().dot(n, x, y);
}

inline void relu(std::size_t n, const double* x, double* y) {
  active().relu(n, x, y);
}

inline void relu_backward(std::size_t n, const double* pre, double* g) {
  active().relu_backward(n, pre, g);
}

}  // namespace umeg::kernels
