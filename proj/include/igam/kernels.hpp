#pragma once

#include <cstdint>

namespace igam::kernels {

// Function table for the data-parallel inner loops. Two variants exist: the
// scalar reference and an AVX2 one picked at runtime. Both variants perform
// the per-element operations in the same order (no FMA contraction, matmul
// fixed to an i,k,j loop), so they produce bit-identical results; the kernel
// equivalence tests assert exact equality. Reductions (sums, dots) are not
// part of the table and stay scalar everywhere for the same reason.
struct Ops {
  void (*add)(double* dst, const double* a, const double* b, int64_t n);
  void (*sub)(double* dst, const double* a, const double* b, int64_t n);
  void (*mul)(double* dst, const double* a, const double* b, int64_t n);
  void (*div)(double* dst, const double* a, const double* b, int64_t n);
  // dst = c*a + d
  void (*affine)(double* dst, const double* a, double c, double d, int64_t n);
  // y += a*x
  void (*axpy)(double* y, double a, const double* x, int64_t n);
  void (*relu)(double* dst, const double* a, int64_t n);
  // 1.0 where a > 0, else 0.0
  void (*relu_mask)(double* dst, const double* a, int64_t n);
  void (*clamp)(double* dst, const double* a, double lo, double hi, int64_t n);
  // C[M,N] += A[M,K] * B[K,N], all row-major
  void (*matmul)(double* c, const double* a, const double* b, int64_t m,
                 int64_t k, int64_t n);
};

enum class Variant { scalar, avx2 };

bool avx2_supported();
const char* variant_name(Variant v);

// Table for an explicit variant (equivalence tests). Throws if unavailable.
const Ops& table(Variant v);

// Dispatched variant: IGAM_KERNELS=scalar|avx2 overrides CPU detection.
Variant active_variant();
void set_variant(Variant v);
const Ops& active();

}  // namespace igam::kernels
