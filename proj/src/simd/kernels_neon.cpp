// AArch64 only; NEON is baseline there, so no runtime probe is needed.

#include <arm_neon.h>

#include <cmath>
#include <cstring>

#include "alab/simd/kernels.hpp"

namespace alab::simd {
namespace {

constexpr std::size_t kLanes = 2;

inline void row_axpy(std::size_t n, double s, const double* b, double* c) {
  const float64x2_t sv = vdupq_n_f64(s);
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    float64x2_t cv = vld1q_f64(c + j);
    cv = vaddq_f64(cv, vmulq_f64(sv, vld1q_f64(b + j)));
    vst1q_f64(c + j, cv);
  }
  for (; j < n; ++j) c[j] += s * b[j];
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) row_axpy(n, a[i * k + p], b + p * n, c + i * n);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) row_axpy(n, a[p * m + i], b + p * n, c + i * n);
  }
}

void add(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(std::size_t n, const double* a, const double* b, double* out) {
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(std::size_t n, double s, const double* a, double* out) {
  const float64x2_t sv = vdupq_n_f64(s);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) vst1q_f64(out + i, vmulq_f64(sv, vld1q_f64(a + i)));
  for (; i < n; ++i) out[i] = s * a[i];
}

void axpy(std::size_t n, double alpha, const double* x, double* y) { row_axpy(n, alpha, x, y); }

void adam(std::size_t n, double* param, const double* grad, double* m,
          double* v, double lr, double beta1, double beta2, double eps,
          double bc1, double bc2) {
  const double omb1 = 1.0 - beta1;
  const double omb2 = 1.0 - beta2;
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    const float64x2_t g = vld1q_f64(grad + i);
    float64x2_t mv = vaddq_f64(vmulq_f64(vdupq_n_f64(beta1), vld1q_f64(m + i)),
                               vmulq_f64(vdupq_n_f64(omb1), g));
    float64x2_t vv = vaddq_f64(vmulq_f64(vdupq_n_f64(beta2), vld1q_f64(v + i)),
                               vmulq_f64(vdupq_n_f64(omb2), vmulq_f64(g, g)));
    vst1q_f64(m + i, mv);
    vst1q_f64(v + i, vv);
    const float64x2_t mhat = vdivq_f64(mv, vdupq_n_f64(bc1));
    const float64x2_t vhat = vdivq_f64(vv, vdupq_n_f64(bc2));
    const float64x2_t step = vdivq_f64(vmulq_f64(vdupq_n_f64(lr), mhat),
                                       vaddq_f64(vsqrtq_f64(vhat), vdupq_n_f64(eps)));
    vst1q_f64(param + i, vsubq_f64(vld1q_f64(param + i), step));
  }
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = beta1 * m[i] + omb1 * g;
    v[i] = beta2 * v[i] + omb2 * (g * g);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param[i] = param[i] - lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

const KernelTable& neon_table() {
  static const KernelTable table{Isa::neon, gemm_nn, gemm_tn, add, sub,
                                 mul,       scale,   axpy,    adam};
  return table;
}

}  // namespace alab::simd
