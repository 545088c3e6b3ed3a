#include "igam/kernels.hpp"

namespace igam::kernels {
namespace {

void add_scalar(double* dst, const double* a, const double* b, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void sub_scalar(double* dst, const double* a, const double* b, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

void mul_scalar(double* dst, const double* a, const double* b, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void div_scalar(double* dst, const double* a, const double* b, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] = a[i] / b[i];
}

void affine_scalar(double* dst, const double* a, double c, double d,
                   int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] = (c * a[i]) + d;
}

void axpy_scalar(double* y, double a, const double* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = y[i] + (a * x[i]);
}

void relu_scalar(double* dst, const double* a, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_mask_scalar(double* dst, const double* a, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dst[i] = a[i] > 0.0 ? 1.0 : 0.0;
}

void clamp_scalar(double* dst, const double* a, double lo, double hi,
                  int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    double v = a[i] > lo ? a[i] : lo;
    dst[i] = v < hi ? v : hi;
  }
}

void matmul_scalar(double* c, const double* a, const double* b, int64_t m,
                   int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] = crow[j] + (av * brow[j]);
    }
  }
}

}  // namespace

const Ops& scalar_table() {
  static const Ops ops{add_scalar,  sub_scalar,       mul_scalar,
                       div_scalar,  affine_scalar,    axpy_scalar,
                       relu_scalar, relu_mask_scalar, clamp_scalar,
                       matmul_scalar};
  return ops;
}

}  // namespace igam::kernels
