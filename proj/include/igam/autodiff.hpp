#pragma once

#include <functional>
#include <vector>

#include "igam/tensor.hpp"

namespace igam {

// Graph recording is on by default; NoGradGuard turns it off for the current
// thread (used for constant-target computations and finite-difference
// probing).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor affine(const Tensor& x, double scale, double shift);  // scale*x + shift
inline Tensor scale(const Tensor& x, double c) { return affine(x, c, 0.0); }
inline Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);  // log(1 + e^x), overflow-safe
inline Tensor square(const Tensor& x) { return mul(x, x); }

// ---- reductions and broadcasts ----
Tensor sum(const Tensor& x);                       // -> [1]
Tensor mean(const Tensor& x);                      // -> [1]
Tensor broadcast_scalar(const Tensor& s, Shape shape);
inline Tensor l2_norm_sq(const Tensor& x) { return sum(square(x)); }

// ---- 2-D ----
Tensor matmul(const Tensor& a, const Tensor& b);   // [M,K]x[K,N]
Tensor transpose2d(const Tensor& a);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // [M,N] + [N]
Tensor col_sum(const Tensor& x);                   // [M,N] -> [N]
Tensor tile_rows(const Tensor& v, int64_t rows);   // [N] -> [M,N]
Tensor row_sum(const Tensor& x);                   // [M,N] -> [M,1]
Tensor tile_cols(const Tensor& v, int64_t cols);   // [M,1] -> [M,N]
Tensor log_softmax(const Tensor& z);               // rowwise on [N,K]

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor slice(const Tensor& x, const std::vector<int64_t>& start,
             const std::vector<int64_t>& size);
Tensor pad_constant(const Tensor& x, const std::vector<int64_t>& before,
                    const std::vector<int64_t>& after, double value);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- image ops; layout is [N,H,W,C] ----
struct ConvGeom {
  int64_t kh = 1, kw = 1;
  int64_t sh = 1, sw = 1;
  int64_t ph = 0, pw = 0;
};

Tensor im2col(const Tensor& x, const ConvGeom& g);  // [N*ho*wo, kh*kw*C]
Tensor col2im(const Tensor& cols, Shape image_shape, const ConvGeom& g);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int64_t stride, int64_t pad);  // w: [kh,kw,Cin,Cout]
Tensor transpose_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int64_t stride, int64_t pad,
                        int64_t out_pad);     // w: [Cin,kh,kw,Cout]
Tensor avg_pool2d(const Tensor& x, int64_t kernel, int64_t stride);
Tensor avg_unpool2d(const Tensor& g, int64_t kernel, int64_t stride,
                    int64_t out_h, int64_t out_w);  // unscaled adjoint scatter
Tensor global_avg_pool(const Tensor& x);            // [N,H,W,C] -> [N,C]
Tensor tile_spatial(const Tensor& v, int64_t h, int64_t w);
Tensor bilinear_upsize(const Tensor& x, int64_t factor);
Tensor bilinear_upsize_adjoint(const Tensor& g, int64_t factor, int64_t in_h,
                               int64_t in_w);

// ---- differentiation ----

// d(scalar)/d(wrt_i). With create_graph the results stay graph-connected so
// they can be differentiated again (the double-backpropagation path).
std::vector<Tensor> grad(const Tensor& scalar, const std::vector<Tensor>& wrt,
                         bool create_graph);

// Max over coordinates of |analytic - central difference| / max(1,|analytic|).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& fn,
                               const Tensor& point, double eps);

}  // namespace igam
