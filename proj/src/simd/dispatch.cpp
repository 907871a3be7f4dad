#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "alab/simd/kernels.hpp"

namespace alab::simd {

#if defined(ALAB_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(ALAB_HAVE_NEON)
const KernelTable& neon_table();
#endif

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "unknown";
}

const KernelTable* avx2_kernels() {
#if defined(ALAB_HAVE_AVX2)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2")) return &avx2_table();
#endif
  return nullptr;
}

const KernelTable* neon_kernels() {
#if defined(ALAB_HAVE_NEON)
  return &neon_table();
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("ALAB_SIMD"); env && std::string(env) == "scalar") {
    return &scalar_kernels();
  }
  if (const auto* t = avx2_kernels()) return t;
  if (const auto* t = neon_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*> g_forced{nullptr};

}  // namespace

const KernelTable& kernels() {
  if (const auto* forced = g_forced.load(std::memory_order_relaxed)) return *forced;
  static const KernelTable* selected = detect();
  return *selected;
}

void force_isa(Isa isa) {
  const KernelTable* t = nullptr;
  switch (isa) {
    case Isa::scalar: t = &scalar_kernels(); break;
    case Isa::avx2: t = avx2_kernels(); break;
    case Isa::neon: t = neon_kernels(); break;
  }
  if (!t) throw std::runtime_error("SIMD variant unavailable: " + std::string(isa_name(isa)));
  g_forced.store(t, std::memory_order_relaxed);
}

void reset_isa() { g_forced.store(nullptr, std::memory_order_relaxed); }

void gemm_nt(const KernelTable& kt, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c, bool accumulate) {
  thread_local std::vector<double> bt;
  bt.resize(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  kt.gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

}  // namespace alab::simd
