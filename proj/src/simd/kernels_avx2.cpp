// Compiled with -mavx2 (and without -mfma) on x86-64 only.

#include <immintrin.h>

#include <cmath>
#include <cstring>

#include "alab/simd/kernels.hpp"

namespace alab::simd {
namespace {

constexpr std::size_t kLanes = 4;

// c[0..n) += s * b[0..n)
inline void row_axpy(std::size_t n, double s, const double* b, double* c) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t j = 0;
  for (; j + 2 * kLanes <= n; j += 2 * kLanes) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    __m256d c1 = _mm256_loadu_pd(c + j + kLanes);
    c0 = _mm256_add_pd(c0, _mm256_mul_pd(sv, _mm256_loadu_pd(b + j)));
    c1 = _mm256_add_pd(c1, _mm256_mul_pd(sv, _mm256_loadu_pd(b + j + kLanes)));
    _mm256_storeu_pd(c + j, c0);
    _mm256_storeu_pd(c + j + kLanes, c1);
  }
  for (; j + kLanes <= n; j += kLanes) {
    __m256d c0 = _mm256_loadu_pd(c + j);
    c0 = _mm256_add_pd(c0, _mm256_mul_pd(sv, _mm256_loadu_pd(b + j)));
    _mm256_storeu_pd(c + j, c0);
  }
  for (; j < n; ++j) c[j] += s * b[j];
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) row_axpy(n, a[i * k + p], b + p * n, crow);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) row_axpy(n, arow[i], brow, c + i * n);
  }
}

template <class VecOp, class ScalarOp>
inline void binary(std::size_t n, const double* a, const double* b, double* out,
                   VecOp vop, ScalarOp sop) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); },
         [](double x, double y) { return x + y; });
}

void sub(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); },
         [](double x, double y) { return x - y; });
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  binary(n, a, b, out, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); },
         [](double x, double y) { return x * y; });
}

void scale(std::size_t n, double s, const double* a, double* out) {
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(sv, _mm256_loadu_pd(a + i)));
  }
  for (; i < n; ++i) out[i] = s * a[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  row_axpy(n, alpha, x, y);
}

void adam(std::size_t n, double* param, const double* grad, double* m,
          double* v, double lr, double beta1, double beta2, double eps,
          double bc1, double bc2) {
  const double one_minus_b1 = 1.0 - beta1;
  const double one_minus_b2 = 1.0 - beta2;
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d omb1 = _mm256_set1_pd(one_minus_b1);
  const __m256d omb2 = _mm256_set1_pd(one_minus_b2);
  const __m256d c1 = _mm256_set1_pd(bc1);
  const __m256d c2 = _mm256_set1_pd(bc2);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d epsv = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    __m256d mv = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    mv = _mm256_add_pd(_mm256_mul_pd(b1, mv), _mm256_mul_pd(omb1, g));
    vv = _mm256_add_pd(_mm256_mul_pd(b2, vv), _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_div_pd(mv, c1);
    const __m256d vhat = _mm256_div_pd(vv, c2);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, mhat),
                                       _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + one_minus_b1 * g;
    v[i] = beta2 * v[i] + one_minus_b2 * (g * g);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] = param[i] - lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::avx2, gemm_nn, gemm_tn, add, sub,
                                 mul,       scale,   axpy,    adam};
  return table;
}

}  // namespace alab::simd
