#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gelae/kernels.h"

// Compiled with -mavx2 -mfma. Each output element is accumulated as a chain
// of fused multiply-adds over k in ascending order, whichever code path
// (register tile or edge loop) produces it. Results therefore do not depend
// on where a row falls inside a tile.

namespace gelae::kernels::avx2 {
namespace {

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 8;

// Packs columns [j0, j0 + 8) of b into a contiguous k x 8 panel.
void pack_panel(const double* b, std::size_t n, std::size_t k, std::size_t j0,
                double* panel) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* src = b + p * n + j0;
    _mm256_storeu_pd(panel + p * kTileCols, _mm256_loadu_pd(src));
    _mm256_storeu_pd(panel + p * kTileCols + 4, _mm256_loadu_pd(src + 4));
  }
}

void tile_4x8(std::size_t k, const double* a, std::size_t lda,
              const double* panel, double* c, std::size_t ldc) {
  __m256d c00 = _mm256_loadu_pd(c);
  __m256d c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + ldc);
  __m256d c11 = _mm256_loadu_pd(c + ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc);
  __m256d c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc);
  __m256d c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(panel + p * kTileCols);
    const __m256d b1 = _mm256_loadu_pd(panel + p * kTileCols + 4);
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

void tile_1x8(std::size_t k, const double* a, const double* panel, double* c) {
  __m256d c0 = _mm256_loadu_pd(c);
  __m256d c1 = _mm256_loadu_pd(c + 4);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_broadcast_sd(a + p);
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(panel + p * kTileCols), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(panel + p * kTileCols + 4), c1);
  }
  _mm256_storeu_pd(c, c0);
  _mm256_storeu_pd(c + 4, c1);
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  if (m == 0 || n == 0 || k == 0) return;

  thread_local std::vector<double> panel;
  panel.resize(k * kTileCols);

  const std::size_t full_cols = n - n % kTileCols;
  for (std::size_t j0 = 0; j0 < full_cols; j0 += kTileCols) {
    pack_panel(b, n, k, j0, panel.data());
    std::size_t i = 0;
    for (; i + kTileRows <= m; i += kTileRows) {
      tile_4x8(k, a + i * k, k, panel.data(), c + i * n + j0, n);
    }
    for (; i < m; ++i) tile_1x8(k, a + i * k, panel.data(), c + i * n + j0);
  }
  // Ragged right edge.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = full_cols; j < n; ++j) {
      double acc = c[i * n + j];
      for (std::size_t p = 0; p < k; ++p) {
        acc = std::fma(a[i * k + p], b[p * n + j], acc);
      }
      c[i * n + j] = acc;
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                           _mm256_loadu_pd(y + i + 4), acc1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
  double sum = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) sum = std::fma(x[i], y[i], sum);
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

}  // namespace gelae::kernels::avx2
