#include <atomic>
#include <cstdlib>
#include <string>

#include "idf/simd/kernels.hpp"

namespace idf::simd {

#if defined(IDF_HAVE_AVX2)
namespace avx2 {
double dot(const double*, const double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
double squared_distance(const double*, const double*, std::size_t);
void gemm(std::size_t, std::size_t, std::size_t, const double*, std::size_t, const double*, std::size_t,
          double*, std::size_t);
void curve_step(const double*, const double*, double*, std::size_t);
void curve_step_backward(const double*, const double*, const double*, double*, double*, std::size_t);
}  // namespace avx2
#endif

#if defined(IDF_HAVE_NEON)
namespace neon {
double dot(const double*, const double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
double squared_distance(const double*, const double*, std::size_t);
void gemm(std::size_t, std::size_t, std::size_t, const double*, std::size_t, const double*, std::size_t,
          double*, std::size_t);
void curve_step(const double*, const double*, double*, std::size_t);
void curve_step_backward(const double*, const double*, const double*, double*, double*, std::size_t);
}  // namespace neon
#endif

const KernelTable* avx2_kernels() {
#if defined(IDF_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  static const KernelTable table{Isa::Avx2,        "avx2",           avx2::dot,
                                 avx2::axpy,       avx2::squared_distance,
                                 avx2::gemm,       avx2::curve_step, avx2::curve_step_backward};
  return supported ? &table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(IDF_HAVE_NEON)
  // Advanced SIMD is mandatory on AArch64.
  static const KernelTable table{Isa::Neon,        "neon",           neon::dot,
                                 neon::axpy,       neon::squared_distance,
                                 neon::gemm,       neon::curve_step, neon::curve_step_backward};
  return &table;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* variant(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return &scalar_kernels();
    case Isa::Avx2: return avx2_kernels();
    case Isa::Neon: return neon_kernels();
  }
  return nullptr;
}

const KernelTable* initial_choice() {
  if (const char* env = std::getenv("IDF_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::Scalar, Isa::Avx2, Isa::Neon}) {
      if (want == isa_name(isa)) {
        if (const KernelTable* t = variant(isa)) return t;
      }
    }
  }
  if (const KernelTable* t = avx2_kernels()) return t;
  if (const KernelTable* t = neon_kernels()) return t;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_choice()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(Isa isa) {
  const KernelTable* t = variant(isa);
  if (t == nullptr) return false;
  current().store(t, std::memory_order_release);
  return true;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

}  // namespace idf::simd
