#include <random>
#include <vector>

#include "gelae/kernels.h"
#include "gtest/gtest.h"

namespace gelae::kernels {
namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Triple loop written independently of both kernel variants.
std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t k,
                               const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a[i * k + p]) * b[p * n + j];
      c[i * n + j] = static_cast<double>(s);
    }
  }
  return c;
}

class IsaRestore : public ::testing::Test {
 protected:
  void TearDown() override { set_active_isa(saved_); }
  Isa saved_ = active_isa();
};

TEST(Kernels, ScalarIsAlwaysSupported) { EXPECT_TRUE(isa_supported(Isa::kScalar)); }

TEST(Kernels, IsaNames) {
  EXPECT_EQ(isa_name(Isa::kScalar), "scalar");
  EXPECT_EQ(isa_name(Isa::kAvx2), "avx2");
}

TEST(Kernels, ScalarGemmMatchesNaive) {
  std::mt19937_64 rng(1);
  for (const auto [m, n, k] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 7}, {8, 64, 8},
                               {17, 13, 33}, {64, 2000, 256}}) {
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> c(m * n, 0.0);
    scalar::gemm(m, n, k, a.data(), b.data(), c.data(), false);
    const auto ref = naive_gemm(m, n, k, a, b);
    for (std::size_t i = 0; i < c.size(); ++i) ASSERT_NEAR(c[i], ref[i], 1e-12 * k) << m << n << k;
  }
}

TEST(Kernels, GemmAccumulateAdds) {
  std::mt19937_64 rng(2);
  const auto a = random_vec(12, rng), b = random_vec(20, rng);
  std::vector<double> c(15, 1.5);
  gemm(3, 5, 4, a.data(), b.data(), c.data(), true);
  const auto ref = naive_gemm(3, 5, 4, a, b);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(c[i], ref[i] + 1.5, 1e-13);
}

TEST(Kernels, DotAndAxpy) {
  const std::vector<double> x{1, 2, 3}, y{4, 5, 6};
  EXPECT_EQ(dot(x, y), 32.0);
  std::vector<double> z{1, 1, 1};
  axpy(2.0, x, z);
  EXPECT_EQ(z, (std::vector<double>{3, 5, 7}));
}

TEST(Kernels, Transpose) {
  const std::vector<double> src{1, 2, 3, 4, 5, 6};
  std::vector<double> dst(6);
  transpose(2, 3, src.data(), dst.data());
  EXPECT_EQ(dst, (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST_F(IsaRestore, UnsupportedIsaThrows) {
  if (isa_supported(Isa::kAvx2)) GTEST_SKIP() << "avx2 available";
  EXPECT_THROW(set_active_isa(Isa::kAvx2), std::invalid_argument);
}

#if defined(GELAE_HAVE_AVX2)

TEST(KernelsAvx2, GemmMatchesScalarAcrossShapes) {
  if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks avx2/fma";
  std::mt19937_64 rng(3);
  // Odd extents exercise every remainder path of the vector kernel.
  for (std::size_t m = 1; m <= 9; ++m) {
    for (const std::size_t n : {1u, 3u, 4u, 7u, 8u, 13u, 16u, 33u}) {
      for (const std::size_t k : {1u, 2u, 5u, 8u, 17u}) {
        const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
        for (const bool acc : {false, true}) {
          std::vector<double> c1 = random_vec(m * n, rng), c2 = c1;
          scalar::gemm(m, n, k, a.data(), b.data(), c1.data(), acc);
          avx2::gemm(m, n, k, a.data(), b.data(), c2.data(), acc);
          for (std::size_t i = 0; i < c1.size(); ++i) {
            ASSERT_NEAR(c1[i], c2[i], 1e-13) << m << "x" << n << "x" << k;
          }
        }
      }
    }
  }
}

TEST(KernelsAvx2, GemmMatchesScalarOnModelShapes) {
  if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks avx2/fma";
  std::mt19937_64 rng(4);
  for (const auto [m, n, k] : {std::array<std::size_t, 3>{1024, 64, 8}, {1024, 192, 64},
                               {1024, 128, 64}, {128, 2000, 256}, {64, 256, 1024}}) {
    const auto a = random_vec(m * k, rng), b = random_vec(k * n, rng);
    std::vector<double> c1(m * n), c2(m * n);
    scalar::gemm(m, n, k, a.data(), b.data(), c1.data(), false);
    avx2::gemm(m, n, k, a.data(), b.data(), c2.data(), false);
    for (std::size_t i = 0; i < c1.size(); ++i) ASSERT_NEAR(c1[i], c2[i], 1e-12);
  }
}

TEST(KernelsAvx2, DotAndAxpyMatchScalar) {
  if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks avx2/fma";
  std::mt19937_64 rng(5);
  for (std::size_t n = 0; n < 40; ++n) {
    const auto x = random_vec(n, rng), y = random_vec(n, rng);
    EXPECT_NEAR(scalar::dot(x.data(), y.data(), n), avx2::dot(x.data(), y.data(), n), 1e-13);
    std::vector<double> y1 = y, y2 = y;
    scalar::axpy(0.3, x.data(), y1.data(), n);
    avx2::axpy(0.3, x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y1[i], y2[i], 1e-15);
  }
}

TEST_F(IsaRestore, DispatchFollowsSelection) {
  if (!isa_supported(Isa::kAvx2)) GTEST_SKIP() << "CPU lacks avx2/fma";
  std::mt19937_64 rng(6);
  const auto a = random_vec(5 * 9, rng), b = random_vec(9 * 11, rng);
  std::vector<double> via_scalar(55), via_avx2(55);
  set_active_isa(Isa::kScalar);
  EXPECT_EQ(active_isa(), Isa::kScalar);
  gemm(5, 11, 9, a.data(), b.data(), via_scalar.data(), false);
  set_active_isa(Isa::kAvx2);
  EXPECT_EQ(active_isa(), Isa::kAvx2);
  gemm(5, 11, 9, a.data(), b.data(), via_avx2.data(), false);
  for (std::size_t i = 0; i < 55; ++i) EXPECT_NEAR(via_scalar[i], via_avx2[i], 1e-13);
}

#endif

}  // namespace
}  // namespace gelae::kernels
