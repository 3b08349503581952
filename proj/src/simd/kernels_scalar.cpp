#include "idf/simd/kernels.hpp"

#include <algorithm>

namespace idf::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double squared_distance_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void curve_step_scalar(const double* img, const double* a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = img[i];
    out[i] = std::clamp(x + a[i] * (x * (1.0 - x)), 0.0, 1.0);
  }
}

void curve_step_backward_scalar(const double* img, const double* a, const double* g, double* d_img,
                                double* d_a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = img[i];
    d_a[i] += g[i] * (x * (1.0 - x));
    d_img[i] = g[i] * (1.0 + a[i] * (1.0 - 2.0 * x));
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::Scalar,       "scalar",         dot_scalar,
                                 axpy_scalar,       squared_distance_scalar,
                                 gemm_scalar,       curve_step_scalar, curve_step_backward_scalar};
  return table;
}

}  // namespace idf::simd
