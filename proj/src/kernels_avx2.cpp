// AVX2 variants of the kernel table. Compiled with -mavx2 when the compiler
// supports it and gated at runtime behind avx2_supported(). Everything uses
// separate mul/add (no FMA) and the same loop structure as the scalar
// reference so results match it bit for bit.

#include "igam/kernels.hpp"

#if defined(IGAM_BUILD_AVX2)

#include <immintrin.h>

namespace igam::kernels {
namespace {

void add_avx2(double* dst, const double* a, const double* b, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_avx2(double* dst, const double* a, const double* b, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_sub_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_avx2(double* dst, const double* a, const double* b, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void div_avx2(double* dst, const double* a, const double* b, int64_t n) {
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(dst + i, _mm256_div_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) dst[i] = a[i] / b[i];
}

void affine_avx2(double* dst, const double* a, double c, double d, int64_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  const __m256d vd = _mm256_set1_pd(d);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_mul_pd(vc, _mm256_loadu_pd(a + i));
    _mm256_storeu_pd(dst + i, _mm256_add_pd(v, vd));
  }
  for (; i < n; ++i) dst[i] = (c * a[i]) + d;
}

void axpy_avx2(double* y, double a, const double* x, int64_t n) {
  const __m256d va = _mm256_set1_pd(a);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] = y[i] + (a * x[i]);
}

void relu_avx2(double* dst, const double* a, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // max_pd(a, 0) returns 0 for NaN and -0.0 inputs, same as the scalar
    // a > 0 ? a : 0.
    _mm256_storeu_pd(dst + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
  }
  for (; i < n; ++i) dst[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_mask_avx2(double* dst, const double* a, int64_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d gt = _mm256_cmp_pd(_mm256_loadu_pd(a + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dst + i, _mm256_and_pd(gt, one));
  }
  for (; i < n; ++i) dst[i] = a[i] > 0.0 ? 1.0 : 0.0;
}

void clamp_avx2(double* dst, const double* a, double lo, double hi,
                int64_t n) {
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_max_pd(_mm256_loadu_pd(a + i), vlo);
    _mm256_storeu_pd(dst + i, _mm256_min_pd(v, vhi));
  }
  for (; i < n; ++i) {
    double v = a[i] > lo ? a[i] : lo;
    dst[i] = v < hi ? v : hi;
  }
}

void matmul_avx2(double* c, const double* a, const double* b, int64_t m,
                 int64_t k, int64_t n) {
  // i,k,j with the j loop vectorized: each C[i,j] accumulates A[i,p]*B[p,j]
  // in the same p order as the scalar kernel.
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const __m256d vav = _mm256_set1_pd(av);
      const double* brow = b + p * n;
      int64_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d prod = _mm256_mul_pd(vav, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j,
                         _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] = crow[j] + (av * brow[j]);
    }
  }
}

}  // namespace

const Ops* avx2_table_or_null() {
  static const Ops ops{add_avx2,  sub_avx2,       mul_avx2,
                       div_avx2,  affine_avx2,    axpy_avx2,
                       relu_avx2, relu_mask_avx2, clamp_avx2,
                       matmul_avx2};
  return &ops;
}

}  // namespace igam::kernels

#else  // !IGAM_BUILD_AVX2

namespace igam::kernels {

const Ops* avx2_table_or_null() { return nullptr; }

}  // namespace igam::kernels

#endif
