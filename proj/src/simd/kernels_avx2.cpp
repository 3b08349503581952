// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// CPUID check, so nothing here may be called unconditionally. Keep this
// translation unit free of standard-library templates: inline functions
// instantiated here would carry AVX encodings into shared COMDAT sections.

#include <immintrin.h>

#include "idf/simd/kernels.hpp"

namespace idf::simd::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
  }
  for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    s0 = _mm256_fmadd_pd(d, d, s0);
  }
  double s = hsum(s0);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

constexpr std::size_t kBlockN = 256;
constexpr std::size_t kBlockK = 128;

// 4x8 register tile: C[i0..i0+3][j..j+7] += A[i0..i0+3][p0..p1) * B[p0..p1)[j..j+7]
inline void tile_4x8(std::size_t kk, const double* a, std::size_t lda, const double* b,
                     std::size_t ldb, double* c, std::size_t ldc) {
  __m256d c00 = _mm256_loadu_pd(c);
  __m256d c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + ldc);
  __m256d c11 = _mm256_loadu_pd(c + ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc);
  __m256d c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc);
  __m256d c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  for (std::size_t p = 0; p < kk; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    __m256d av = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + lda + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2 * lda + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3 * lda + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// One row of C over a column range, vectorized along j.
inline void row_update(std::size_t kk, std::size_t nn, const double* a, const double* b,
                       std::size_t ldb, double* c) {
  for (std::size_t p = 0; p < kk; ++p) {
    const double ap = a[p];
    if (ap == 0.0) continue;
    axpy(ap, b + p * ldb, c, nn);
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::size_t nn = (n - j0 < kBlockN) ? n - j0 : kBlockN;
    for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
      const std::size_t kk = (k - p0 < kBlockK) ? k - p0 : kBlockK;
      std::size_t i = 0;
      for (; i + 4 <= m; i += 4) {
        const double* ablk = a + i * lda + p0;
        std::size_t j = 0;
        for (; j + 8 <= nn; j += 8)
          tile_4x8(kk, ablk, lda, b + p0 * ldb + j0 + j, ldb, c + i * ldc + j0 + j, ldc);
        if (j < nn) {
          for (std::size_t r = 0; r < 4; ++r)
            row_update(kk, nn - j, ablk + r * lda, b + p0 * ldb + j0 + j, ldb,
                       c + (i + r) * ldc + j0 + j);
        }
      }
      for (; i < m; ++i)
        row_update(kk, nn, a + i * lda + p0, b + p0 * ldb + j0, ldb, c + i * ldc + j0);
    }
  }
}

void curve_step(const double* img, const double* a, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(img + i);
    const __m256d q = _mm256_mul_pd(x, _mm256_sub_pd(one, x));
    const __m256d y = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), q, x);
    _mm256_storeu_pd(out + i, _mm256_min_pd(_mm256_max_pd(y, zero), one));
  }
  for (; i < n; ++i) {
    const double x = img[i];
    const double y = x + a[i] * (x * (1.0 - x));
    out[i] = y < 0.0 ? 0.0 : (y > 1.0 ? 1.0 : y);
  }
}

void curve_step_backward(const double* img, const double* a, const double* g, double* d_img,
                         double* d_a, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_loadu_pd(img + i);
    const __m256d gv = _mm256_loadu_pd(g + i);
    const __m256d q = _mm256_mul_pd(x, _mm256_sub_pd(one, x));
    _mm256_storeu_pd(d_a + i, _mm256_fmadd_pd(gv, q, _mm256_loadu_pd(d_a + i)));
    const __m256d slope = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_fnmadd_pd(two, x, one), one);
    _mm256_storeu_pd(d_img + i, _mm256_mul_pd(gv, slope));
  }
  for (; i < n; ++i) {
    const double x = img[i];
    d_a[i] += g[i] * (x * (1.0 - x));
    d_img[i] = g[i] * (1.0 + a[i] * (1.0 - 2.0 * x));
  }
}

}  // namespace idf::simd::avx2
