#pragma once

// Data-parallel inner loops used by the network layers, the curve operator and
// retrieval. Every kernel has a scalar reference implementation; vectorized
// variants (AVX2+FMA on x86-64, NEON on AArch64) are selected at runtime.

#include <cstddef>
#include <string_view>

namespace idf::simd {

enum class Isa { Scalar, Avx2, Neon };

struct KernelTable {
  Isa isa;
  const char* name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc);
  // out[i] = img[i] + a[i] * img[i] * (1 - img[i]), clamped to [0, 1] so that
  // rounding cannot leave the unit interval.
  void (*curve_step)(const double* img, const double* a, double* out, std::size_t n);
  // Given upstream gradient g of the curve output:
  //   d_img[i] = g[i] * (1 + a[i] * (1 - 2 img[i]))
  //   d_a[i]  += g[i] * img[i] * (1 - img[i])
  void (*curve_step_backward)(const double* img, const double* a, const double* g, double* d_img,
                              double* d_a, std::size_t n);
};

const KernelTable& scalar_kernels();

// Returns nullptr when the variant was not compiled in or the running CPU
// lacks the instruction set.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// The table used by the rest of the library. Chosen once on first use: the
// widest supported variant, unless IDF_SIMD=scalar|avx2|neon overrides it.
const KernelTable& active();

// Forces a variant for the whole process; returns false if it is unavailable.
bool select(Isa isa);

std::string_view isa_name(Isa isa);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline double squared_distance(const double* a, const double* b, std::size_t n) {
  return active().squared_distance(a, b, n);
}
inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm(m, n, k, a, lda, b, ldb, c, ldc);
}
inline void curve_step(const double* img, const double* a, double* out, std::size_t n) {
  active().curve_step(img, a, out, n);
}
inline void curve_step_backward(const double* img, const double* a, const double* g, double* d_img,
                                double* d_a, std::size_t n) {
  active().curve_step_backward(img, a, g, d_img, d_a, n);
}

}  // namespace idf::simd
