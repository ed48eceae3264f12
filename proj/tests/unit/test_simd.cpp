// Scalar reference kernels vs. the AVX2 variants on random inputs.

#include <cmath>
#include <random>
#include <vector>

#include "crowding/simd/kernels.hpp"
#include "doctest.h"

using crowding::simd::KernelTable;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

const KernelTable* vector_table() {
  if (!crowding::simd::cpu_has_avx2()) return nullptr;
  return crowding::simd::avx2_kernels();
}

}  // namespace

TEST_CASE("active table is one of the known variants") {
  const auto& t = crowding::simd::active();
  CHECK((t.name == "scalar" || t.name == "avx2"));
}

TEST_CASE("dot and axpy agree with the scalar reference") {
  const KernelTable* vec = vector_table();
  if (!vec) return;
  const auto& ref = crowding::simd::scalar_kernels();
  std::mt19937_64 rng(7);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 129u, 1000u}) {
    auto x = random_vec(n, rng), y = random_vec(n, rng);
    const double a = ref.dot(x.data(), y.data(), n);
    const double b = vec->dot(x.data(), y.data(), n);
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::abs(x[i] * y[i]);
    CHECK(std::abs(a - b) <= 1e-14 * (scale + 1.0));

    auto y1 = y, y2 = y;
    ref.axpy(0.37, x.data(), y1.data(), n);
    vec->axpy(0.37, x.data(), y2.data(), n);
    CHECK(y1 == y2);
  }
}

TEST_CASE("gemm_nn variants are bit-identical (same fma order)") {
  const KernelTable* vec = vector_table();
  if (!vec) return;
  const auto& ref = crowding::simd::scalar_kernels();
  std::mt19937_64 rng(11);
  const std::size_t shapes[][3] = {{1, 1, 1},   {4, 8, 3},    {5, 9, 7},  {13, 64, 34},
                                   {64, 128, 64}, {3, 4, 128}, {17, 33, 2}, {8, 12, 0}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), c0 = random_vec(m * n, rng);
    auto c1 = c0, c2 = c0;
    ref.gemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
    vec->gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
    CHECK(c1 == c2);
  }
}

TEST_CASE("relu variants agree") {
  const KernelTable* vec = vector_table();
  if (!vec) return;
  std::mt19937_64 rng(3);
  auto x = random_vec(37, rng);
  std::vector<double> a(37), b(37);
  crowding::simd::scalar_kernels().relu(x.data(), a.data(), 37);
  vec->relu(x.data(), b.data(), 37);
  CHECK(a == b);
}
