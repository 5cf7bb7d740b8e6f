#include "mutatt/kernels.hpp"

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mutatt::kernels {

namespace {

// One output row of each product. Shared by the serial and parallel paths so
// the summation order is identical by construction.
inline void row_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t i,
                   std::size_t q, std::size_t r) {
  const double* a_row = a + i * q;
  double* c_row = c + i * r;
  for (std::size_t k = 0; k < q; ++k) {
    const double aik = a_row[k];
    if (aik == 0.0) continue;
    const double* b_row = b + k * r;
    for (std::size_t j = 0; j < r; ++j) c_row[j] += aik * b_row[j];
  }
}

inline void row_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t i,
                   std::size_t q, std::size_t r) {
  const double* a_row = a + i * r;
  double* c_row = c + i * q;
  for (std::size_t j = 0; j < q; ++j) {
    const double* b_row = b + j * r;
    double acc = 0.0;
    for (std::size_t k = 0; k < r; ++k) acc += a_row[k] * b_row[k];
    c_row[j] += acc;
  }
}

inline void row_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t i,
                   std::size_t p, std::size_t q, std::size_t r) {
  double* c_row = c + i * r;
  for (std::size_t k = 0; k < p; ++k) {
    const double aki = a[k * q + i];
    if (aki == 0.0) continue;
    const double* b_row = b + k * r;
    for (std::size_t j = 0; j < r; ++j) c_row[j] += aki * b_row[j];
  }
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) row_nn(a.data(), b.data(), c.data(), i, q, r);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < p; ++i) row_nt(a.data(), b.data(), c.data(), i, q, r);
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  for (std::size_t i = 0; i < q; ++i) {
    row_tn(a.data(), b.data(), c.data(), i, p, q, r);
  }
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  const auto rows = static_cast<std::int64_t>(p);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    row_nn(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), q, r);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  const auto rows = static_cast<std::int64_t>(p);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    row_nt(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), q, r);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  const auto rows = static_cast<std::int64_t>(q);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < rows; ++i) {
    row_tn(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), p, q, r);
  }
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

bool use_parallel(std::size_t work) {
#ifdef _OPENMP
  return work >= kParallelThreshold && !omp_in_parallel() &&
         omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  if (use_parallel(p * q * r)) {
    parallel::gemm_nn(a, b, c, p, q, r);
  } else {
    serial::gemm_nn(a, b, c, p, q, r);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  if (use_parallel(p * q * r)) {
    parallel::gemm_nt(a, b, c, p, q, r);
  } else {
    serial::gemm_nt(a, b, c, p, q, r);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r) {
  if (use_parallel(p * q * r)) {
    parallel::gemm_tn(a, b, c, p, q, r);
  } else {
    serial::gemm_tn(a, b, c, p, q, r);
  }
}

}  // namespace mutatt::kernels
