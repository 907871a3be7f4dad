#pragma once

// Dense fp64 kernels behind the autograd tape.
//
// Every variant produces results bit-identical to the scalar reference:
// vector lanes run across output columns, and each output element is
// accumulated in the same order (increasing inner index) with separate
// multiply and add instructions. No FMA is used anywhere.

#include <cstddef>
#include <string_view>

namespace alab::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;

  // C(m x n) = A(m x k) * B(k x n); when accumulate, C += A * B.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // C(m x n) = A(k x m)^T * B(k x n)
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);

  void (*add)(std::size_t n, const double* a, const double* b, double* out);
  void (*sub)(std::size_t n, const double* a, const double* b, double* out);
  void (*mul)(std::size_t n, const double* a, const double* b, double* out);
  void (*scale)(std::size_t n, double s, const double* a, double* out);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);

  // One bias-corrected Adam update over n contiguous parameters.
  // bc1 = 1 - beta1^t, bc2 = 1 - beta2^t.
  void (*adam)(std::size_t n, double* param, const double* grad, double* m,
               double* v, double lr, double beta1, double beta2, double eps,
               double bc1, double bc2);
};

const KernelTable& scalar_kernels();

// nullptr when the variant is not compiled in or the CPU lacks support.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Best available table. ALAB_SIMD=scalar in the environment forces the
// reference path.
const KernelTable& kernels();

// Overrides runtime selection (tests, benchmarks). Throws if unavailable.
void force_isa(Isa isa);
void reset_isa();

// C(m x n) = A(m x k) * B(n x k)^T, via a transposed copy of B so the
// per-element summation order matches gemm_nn.
void gemm_nt(const KernelTable& kt, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c, bool accumulate);

}  // namespace alab::simd
