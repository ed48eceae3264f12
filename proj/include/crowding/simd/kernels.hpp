#pragma once

// Dense double-precision inner loops used by the tensor/graph layer.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant compiled in its own translation unit. The variant is
// picked once at first use from CPUID; CROWDING_SIMD=scalar|avx2 overrides.

#include <cstddef>
#include <string_view>

namespace crowding::simd {

struct KernelTable {
  std::string_view name;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C(m x n) += A(m x k) * B(k x n); all row-major with explicit leading dims.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t lda, const double* b, std::size_t ldb, double* c,
                  std::size_t ldc);
  // y[i] = max(x[i], 0)
  void (*relu)(const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the build has no AVX2 variant.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

// Table selected for this process (cached after the first call).
const KernelTable& active();

}  // namespace crowding::simd
