#include <cstdlib>
#include <stdexcept>
#include <string>

#include "crowding/simd/kernels.hpp"

namespace crowding::simd {

#if !defined(CROWDING_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif

bool cpu_has_avx2() {
#if defined(CROWDING_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable& select() {
  const char* env = std::getenv("CROWDING_SIMD");
  const std::string want = env ? env : "auto";
  if (want == "scalar") return scalar_kernels();
  if (want == "avx2") {
    if (!cpu_has_avx2() || avx2_kernels() == nullptr)
      throw std::runtime_error("CROWDING_SIMD=avx2 requested but unavailable");
    return *avx2_kernels();
  }
  if (want != "auto")
    throw std::runtime_error("CROWDING_SIMD must be auto, scalar or avx2");
  if (cpu_has_avx2() && avx2_kernels() != nullptr) return *avx2_kernels();
  return scalar_kernels();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace crowding::simd
