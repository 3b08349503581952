#include <arm_neon.h>

#include "idf/simd/kernels.hpp"

namespace idf::simd::neon {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t s0 = vdupq_n_f64(0.0);
  float64x2_t s1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 = vfmaq_f64(s0, vld1q_f64(a + i), vld1q_f64(b + i));
    s1 = vfmaq_f64(s1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  float64x2_t s0 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    s0 = vfmaq_f64(s0, d, d);
  }
  double s = vaddvq_f64(s0);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double ap = a[i * lda + p];
      if (ap == 0.0) continue;
      axpy(ap, b + p * ldb, c + i * ldc, n);
    }
  }
}

void curve_step(const double* img, const double* a, double* out, std::size_t n) {
  const float64x2_t one = vdupq_n_f64(1.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t x = vld1q_f64(img + i);
    const float64x2_t q = vmulq_f64(x, vsubq_f64(one, x));
    const float64x2_t y = vfmaq_f64(x, vld1q_f64(a + i), q);
    vst1q_f64(out + i, vminq_f64(vmaxq_f64(y, vdupq_n_f64(0.0)), one));
  }
  for (; i < n; ++i) {
    const double x = img[i];
    const double y = x + a[i] * (x * (1.0 - x));
    out[i] = y < 0.0 ? 0.0 : (y > 1.0 ? 1.0 : y);
  }
}

void curve_step_backward(const double* img, const double* a, const double* g, double* d_img,
                         double* d_a, std::size_t n) {
  const float64x2_t one = vdupq_n_f64(1.0);
  const float64x2_t two = vdupq_n_f64(2.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t x = vld1q_f64(img + i);
    const float64x2_t gv = vld1q_f64(g + i);
    const float64x2_t q = vmulq_f64(x, vsubq_f64(one, x));
    vst1q_f64(d_a + i, vfmaq_f64(vld1q_f64(d_a + i), gv, q));
    const float64x2_t slope = vfmaq_f64(one, vld1q_f64(a + i), vfmsq_f64(one, two, x));
    vst1q_f64(d_img + i, vmulq_f64(gv, slope));
  }
  for (; i < n; ++i) {
    const double x = img[i];
    d_a[i] += g[i] * (x * (1.0 - x));
    d_img[i] = g[i] * (1.0 + a[i] * (1.0 - 2.0 * x));
  }
}

}  // namespace idf::simd::neon
