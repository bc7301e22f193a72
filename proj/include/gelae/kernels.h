#pragma once

// Dense double-precision inner loops used by the tensor engine.
//
// Every kernel has a portable scalar reference in `gelae::kernels::scalar`
// and, on x86-64, an AVX2+FMA variant in `gelae::kernels::avx2`. The free
// functions in `gelae::kernels` dispatch to whichever instruction set was
// selected at startup. Selection honours the GELAE_ISA environment variable
// ("scalar" or "avx2") and otherwise picks the widest ISA the CPU supports.
//
// All matrices are row-major and densely packed.

#include <cstddef>
#include <span>
#include <string_view>

namespace gelae::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

/// True when the variant was compiled in and the running CPU can execute it.
bool isa_supported(Isa isa);

Isa active_isa();

/// Switches the dispatch table. Throws std::invalid_argument when the ISA is
/// not supported on this machine.
void set_active_isa(Isa isa);

/// c[m x n] = a[m x k] * b[k x n], or c += a * b when `accumulate` is set.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

double dot(std::span<const double> x, std::span<const double> y);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// dst[cols x rows] = transpose(src[rows x cols])
void transpose(std::size_t rows, std::size_t cols, const double* src,
               double* dst);

namespace scalar {
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(GELAE_HAVE_AVX2)
namespace avx2 {
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

}  // namespace gelae::kernels
