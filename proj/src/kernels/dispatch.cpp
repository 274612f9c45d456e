#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "umeg/kernels.hpp"

namespace umeg::kernels {
namespace {

std::atomic<int> g_active{-1};

Isa detect() {
  if (const char* env = std::getenv("UMEG_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(__x86_64__) || defined(__i386__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() {
  int v = g_active.load(std::memory_order_acquire);
  if (v < 0) {
    v = static_cast<int>(detect());
    int expected = -1;
    if (!g_active.compare_exchange_strong(expected, v)) v = expected;
  }
  return static_cast<Isa>(v);
}

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel variant not supported on this CPU: " +
                                std::string(isa_name(isa)));
  }
  g_active.store(static_cast<int>(isa), std::memory_order_release);
}

const KernelTable& table(Isa isa) {
  return isa == Isa::kAvx2 ? avx2_table() : scalar_table();
}

}  // namespace umeg::kernels
