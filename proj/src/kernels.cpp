#include "gelae/kernels.h"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace gelae::kernels {
namespace {

struct Table {
  Isa isa;
  void (*gemm)(std::size_t, std::size_t, std::size_t, const double*,
               const double*, double*, bool);
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
};

constexpr Table kScalarTable{Isa::kScalar, &scalar::gemm, &scalar::dot,
                             &scalar::axpy};
#if defined(GELAE_HAVE_AVX2)
constexpr Table kAvx2Table{Isa::kAvx2, &avx2::gemm, &avx2::dot, &avx2::axpy};
#endif

const Table& table_for(Isa isa) {
#if defined(GELAE_HAVE_AVX2)
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  (void)isa;
  return kScalarTable;
}

Isa initial_isa() {
  if (const char* env = std::getenv("GELAE_ISA")) {
    const std::string requested(env);
    if (requested == "scalar") return Isa::kScalar;
    if (requested == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

const Table*& current() {
  static const Table* table = &table_for(initial_isa());
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(GELAE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa active_isa() { return current()->isa; }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("instruction set not supported here: " +
                                std::string(isa_name(isa)));
  }
  current() = &table_for(isa);
}

void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  current()->gemm(m, n, k, a, b, c, accumulate);
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("dot: length mismatch");
  return current()->dot(x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  current()->axpy(alpha, x.data(), y.data(), x.size());
}

void transpose(std::size_t rows, std::size_t cols, const double* src,
               double* dst) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t i1 = std::min(rows, i0 + kBlock);
      const std::size_t j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

}  // namespace gelae::kernels
