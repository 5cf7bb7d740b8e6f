#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels used by the differentiation graph.
//
// Every kernel exists twice: a plain serial loop nest kept as the reference,
// and an OpenMP version that splits output rows across threads. Both visit
// the reduction index in the same order for each output element, so their
// results are bitwise identical regardless of thread count.
//
// All matrices are row-major. Outputs are accumulated into (`+=`), never
// overwritten; callers zero them first when they want a plain product.
namespace mutatt::kernels {

namespace serial {

// c[p x r] += a[p x q] * b[q x r]
void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);
// c[p x q] += a[p x r] * b[q x r]^T
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);
// c[q x r] += a[p x q]^T * b[p x r]
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);

}  // namespace parallel

// Multiply-adds below which the dispatchers stay serial; thread start-up
// dominates for the small per-region products.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

// Dispatchers: parallel above the threshold when OpenMP has >1 thread.
void gemm_nn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);
void gemm_tn(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t p, std::size_t q, std::size_t r);

// Number of threads an OpenMP region would use (1 without OpenMP).
int max_threads();

}  // namespace mutatt::kernels
