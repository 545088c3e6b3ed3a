#include "igam/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "igam/kernels.hpp"

namespace igam {

namespace {

thread_local bool g_grad_enabled = true;
thread_local uint64_t g_next_node_id = 1;

struct ScopedGradMode {
  bool prev;
  explicit ScopedGradMode(bool on) : prev(g_grad_enabled) {
    g_grad_enabled = on;
  }
  ~ScopedGradMode() { g_grad_enabled = prev; }
};

using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor&, const Node&)>;

Tensor make_op(const char* name, Shape shape, std::vector<double> values,
               std::vector<Tensor> parents, BackwardFn backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  bool track = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parents) {
      if (p.requires_grad()) {
        track = true;
        break;
      }
    }
  }
  if (track) {
    auto node = std::make_shared<Node>();
    node->id = g_next_node_id++;
    node->op = name;
    node->parents = std::move(parents);
    node->out = out.handle();
    node->backward = std::move(backward);
    out.impl()->node = std::move(node);
    out.set_requires_grad(true);
  }
  return out;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
  }
}

std::vector<double> map_unary(const Tensor& x, double (*f)(double)) {
  std::vector<double> out(static_cast<size_t>(x.size()));
  const double* src = x.data();
  for (int64_t i = 0; i < x.size(); ++i) out[static_cast<size_t>(i)] = f(src[i]);
  return out;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------- elementwise ----------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  std::vector<double> v(static_cast<size_t>(a.size()));
  kernels::active().add(v.data(), a.data(), b.data(), a.size());
  return make_op("add", a.shape(), std::move(v), {a, b},
                 [](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{g, g};
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  std::vector<double> v(static_cast<size_t>(a.size()));
  kernels::active().sub(v.data(), a.data(), b.data(), a.size());
  return make_op("sub", a.shape(), std::move(v), {a, b},
                 [](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{g, neg(g)};
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  std::vector<double> v(static_cast<size_t>(a.size()));
  kernels::active().mul(v.data(), a.data(), b.data(), a.size());
  return make_op("mul", a.shape(), std::move(v), {a, b},
                 [](const Tensor& g, const Node& self) {
                   return std::vector<Tensor>{mul(g, self.parents[1]),
                                              mul(g, self.parents[0])};
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape("div", a, b);
  std::vector<double> v(static_cast<size_t>(a.size()));
  kernels::active().div(v.data(), a.data(), b.data(), a.size());
  return make_op("div", a.shape(), std::move(v), {a, b},
                 [](const Tensor& g, const Node& self) {
                   const Tensor& b_in = self.parents[1];
                   Tensor da = div(g, b_in);
                   Tensor db = neg(mul(g, div(self.output(), b_in)));
                   return std::vector<Tensor>{da, db};
                 });
}

Tensor affine(const Tensor& x, double scale_c, double shift_c) {
  std::vector<double> v(static_cast<size_t>(x.size()));
  kernels::active().affine(v.data(), x.data(), scale_c, shift_c, x.size());
  return make_op("affine", x.shape(), std::move(v), {x},
                 [scale_c](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{scale(g, scale_c)};
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> v(static_cast<size_t>(x.size()));
  kernels::active().relu(v.data(), x.data(), x.size());
  // Subgradient 0 at exactly 0; the mask is a constant, so the second
  // derivative through relu is 0 everywhere.
  Tensor mask = Tensor::zeros(x.shape());
  kernels::active().relu_mask(mask.data(), x.data(), x.size());
  return make_op("relu", x.shape(), std::move(v), {x},
                 [mask](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{mul(g, mask)};
                 });
}

Tensor exp(const Tensor& x) {
  return make_op("exp", x.shape(),
                 map_unary(x, [](double v) { return std::exp(v); }), {x},
                 [](const Tensor& g, const Node& self) {
                   return std::vector<Tensor>{mul(g, self.output())};
                 });
}

Tensor log(const Tensor& x) {
  return make_op("log", x.shape(),
                 map_unary(x, [](double v) { return std::log(v); }), {x},
                 [](const Tensor& g, const Node& self) {
                   return std::vector<Tensor>{div(g, self.parents[0])};
                 });
}

Tensor sqrt(const Tensor& x) {
  return make_op("sqrt", x.shape(),
                 map_unary(x, [](double v) { return std::sqrt(v); }), {x},
                 [](const Tensor& g, const Node& self) {
                   return std::vector<Tensor>{
                       div(scale(g, 0.5), self.output())};
                 });
}

Tensor sigmoid(const Tensor& x) {
  auto sig = [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
  };
  return make_op("sigmoid", x.shape(), map_unary(x, sig), {x},
                 [](const Tensor& g, const Node& self) {
                   Tensor s = self.output();
                   return std::vector<Tensor>{
                       mul(g, mul(s, affine(s, -1.0, 1.0)))};
                 });
}

Tensor softplus(const Tensor& x) {
  auto sp = [](double v) {
    // log(1 + e^v) without overflow
    return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  };
  return make_op("softplus", x.shape(), map_unary(x, sp), {x},
                 [](const Tensor& g, const Node& self) {
                   return std::vector<Tensor>{
                       mul(g, sigmoid(self.parents[0]))};
                 });
}

// ---------------- reductions / broadcasts ----------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  const double* src = x.data();
  for (int64_t i = 0; i < x.size(); ++i) s += src[i];
  return make_op("sum", {1}, {s}, {x},
                 [shape = x.shape()](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{broadcast_scalar(g, shape)};
                 });
}

Tensor mean(const Tensor& x) {
  return affine(sum(x), 1.0 / static_cast<double>(x.size()), 0.0);
}

Tensor broadcast_scalar(const Tensor& s, Shape shape) {
  if (s.size() != 1) throw NotScalar("broadcast_scalar");
  const int64_t n = numel(shape);
  std::vector<double> v(static_cast<size_t>(n), s.data()[0]);
  return make_op("broadcast_scalar", std::move(shape), std::move(v), {s},
                 [](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{sum(g)};
                 });
}

// ---------------- 2-D ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeMismatch("matmul: " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n), 0.0);
  kernels::active().matmul(v.data(), a.data(), b.data(), m, k, n);
  return make_op("matmul", {m, n}, std::move(v), {a, b},
                 [](const Tensor& g, const Node& self) {
                   const Tensor& a_in = self.parents[0];
                   const Tensor& b_in = self.parents[1];
                   Tensor da = matmul(g, transpose2d(b_in));
                   Tensor db = matmul(transpose2d(a_in), g);
                   return std::vector<Tensor>{da, db};
                 });
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeMismatch("transpose2d expects [M,N]");
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<double> v(static_cast<size_t>(m * n));
  const double* src = a.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      v[static_cast<size_t>(j * m + i)] = src[i * n + j];
    }
  }
  return make_op("transpose2d", {n, m}, std::move(v), {a},
                 [](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{transpose2d(g)};
                 });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || v.dim(0) != x.dim(1)) {
    throw ShapeMismatch("add_rowvec: " + shape_str(x.shape()) + " + " +
                        shape_str(v.shape()));
  }
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<size_t>(m * n));
  for (int64_t i = 0; i < m; ++i) {
    kernels::active().add(out.data() + i * n, x.data() + i * n, v.data(), n);
  }
  return make_op("add_rowvec", x.shape(), std::move(out), {x, v},
                 [](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{g, col_sum(g)};
                 });
}

Tensor col_sum(const Tensor& x) {
  if (x.rank() != 2) throw ShapeMismatch("col_sum expects [M,N]");
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    for (int64_t j = 0; j < n; ++j) v[static_cast<size_t>(j)] += row[j];
  }
  return make_op("col_sum", {n}, std::move(v), {x},
                 [m](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{tile_rows(g, m)};
                 });
}

Tensor tile_rows(const Tensor& v, int64_t rows) {
  if (v.rank() != 1) throw ShapeMismatch("tile_rows expects [N]");
  const int64_t n = v.dim(0);
  std::vector<double> out(static_cast<size_t>(rows * n));
  for (int64_t i = 0; i < rows; ++i) {
    std::copy(v.data(), v.data() + n, out.data() + i * n);
  }
  return make_op("tile_rows", {rows, n}, std::move(out), {v},
                 [](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{col_sum(g)};
                 });
}

Tensor row_sum(const Tensor& x) {
  if (x.rank() != 2) throw ShapeMismatch("row_sum expects [M,N]");
  const int64_t m = x.dim(0), n = x.dim(1);
  std::vector<double> v(static_cast<size_t>(m), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += row[j];
    v[static_cast<size_t>(i)] = s;
  }
  return make_op("row_sum", {m, 1}, std::move(v), {x},
                 [n](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{tile_cols(g, n)};
                 });
}

Tensor tile_cols(const Tensor& v, int64_t cols) {
  if (v.rank() != 2 || v.dim(1) != 1) {
    throw ShapeMismatch("tile_cols expects [M,1]");
  }
  const int64_t m = v.dim(0);
  std::vector<double> out(static_cast<size_t>(m * cols));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(out.data() + i * cols, out.data() + (i + 1) * cols, v.data()[i]);
  }
  return make_op("tile_cols", {m, cols}, std::move(out), {v},
                 [](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{row_sum(g)};
                 });
}

Tensor log_softmax(const Tensor& z) {
  if (z.rank() != 2) throw ShapeMismatch("log_softmax expects [N,K]");
  const int64_t n = z.dim(0), k = z.dim(1);
  std::vector<double> v(static_cast<size_t>(n * k));
  for (int64_t i = 0; i < n; ++i) {
    const double* row = z.data() + i * k;
    double m = row[0];
    for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double lse = 0.0;
    for (int64_t j = 0; j < k; ++j) lse += std::exp(row[j] - m);
    lse = std::log(lse) + m;
    for (int64_t j = 0; j < k; ++j) v[static_cast<size_t>(i * k + j)] = row[j] - lse;
  }
  return make_op("log_softmax", z.shape(), std::move(v), {z},
                 [k](const Tensor& g, const Node& self) {
                   Tensor sm = exp(self.output());
                   Tensor gsum = tile_cols(row_sum(g), k);
                   return std::vector<Tensor>{sub(g, mul(sm, gsum))};
                 });
}

// ---------------- shape ----------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " +
                        shape_str(shape));
  }
  std::vector<double> v(x.data(), x.data() + x.size());
  return make_op("reshape", std::move(shape), std::move(v), {x},
                 [orig = x.shape()](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{reshape(g, orig)};
                 });
}

namespace {

// Iterates the coordinates of `size` in row-major order, mapping between two
// offset windows of possibly different tensors.
template <typename Fn>
void for_each_window(const Shape& size, Fn&& fn) {
  const int rank = static_cast<int>(size.size());
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  const int64_t total = numel(size);
  for (int64_t c = 0; c < total; ++c) {
    fn(idx);
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[static_cast<size_t>(d)] < size[static_cast<size_t>(d)]) break;
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int d = static_cast<int>(shape.size()) - 2; d >= 0; --d) {
    s[static_cast<size_t>(d)] =
        s[static_cast<size_t>(d) + 1] * shape[static_cast<size_t>(d) + 1];
  }
  return s;
}

}  // namespace

Tensor slice(const Tensor& x, const std::vector<int64_t>& start,
             const std::vector<int64_t>& size) {
  const int rank = x.rank();
  if (static_cast<int>(start.size()) != rank ||
      static_cast<int>(size.size()) != rank) {
    throw ShapeMismatch("slice rank mismatch");
  }
  for (int d = 0; d < rank; ++d) {
    if (start[static_cast<size_t>(d)] < 0 || size[static_cast<size_t>(d)] < 1 ||
        start[static_cast<size_t>(d)] + size[static_cast<size_t>(d)] >
            x.dim(d)) {
      throw ShapeMismatch("slice out of bounds on axis " + std::to_string(d));
    }
  }
  Shape out_shape(size.begin(), size.end());
  std::vector<double> v(static_cast<size_t>(numel(out_shape)));
  const auto in_strides = row_major_strides(x.shape());
  const auto out_strides = row_major_strides(out_shape);
  for_each_window(out_shape, [&](const std::vector<int64_t>& idx) {
    int64_t in_off = 0, out_off = 0;
    for (int d = 0; d < rank; ++d) {
      in_off += (start[static_cast<size_t>(d)] + idx[static_cast<size_t>(d)]) *
                in_strides[static_cast<size_t>(d)];
      out_off += idx[static_cast<size_t>(d)] * out_strides[static_cast<size_t>(d)];
    }
    v[static_cast<size_t>(out_off)] = x.data()[in_off];
  });
  return make_op(
      "slice", out_shape, std::move(v), {x},
      [start, orig = x.shape()](const Tensor& g, const Node&) {
        std::vector<int64_t> before(start), after(orig.size());
        for (size_t d = 0; d < orig.size(); ++d) {
          after[d] = orig[d] - start[d] - g.shape()[d];
        }
        return std::vector<Tensor>{pad_constant(g, before, after, 0.0)};
      });
}

Tensor pad_constant(const Tensor& x, const std::vector<int64_t>& before,
                    const std::vector<int64_t>& after, double value) {
  const int rank = x.rank();
  if (static_cast<int>(before.size()) != rank ||
      static_cast<int>(after.size()) != rank) {
    throw ShapeMismatch("pad_constant rank mismatch");
  }
  Shape out_shape(x.shape());
  for (int d = 0; d < rank; ++d) {
    if (before[static_cast<size_t>(d)] < 0 || after[static_cast<size_t>(d)] < 0) {
      throw ShapeMismatch("pad_constant negative amount");
    }
    out_shape[static_cast<size_t>(d)] +=
        before[static_cast<size_t>(d)] + after[static_cast<size_t>(d)];
  }
  std::vector<double> v(static_cast<size_t>(numel(out_shape)), value);
  const auto in_strides = row_major_strides(x.shape());
  const auto out_strides = row_major_strides(out_shape);
  for_each_window(x.shape(), [&](const std::vector<int64_t>& idx) {
    int64_t in_off = 0, out_off = 0;
    for (int d = 0; d < rank; ++d) {
      in_off += idx[static_cast<size_t>(d)] * in_strides[static_cast<size_t>(d)];
      out_off += (before[static_cast<size_t>(d)] + idx[static_cast<size_t>(d)]) *
                 out_strides[static_cast<size_t>(d)];
    }
    v[static_cast<size_t>(out_off)] = x.data()[in_off];
  });
  return make_op("pad_constant", out_shape, std::move(v), {x},
                 [before, size = x.shape()](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{slice(g, before, size)};
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeMismatch("concat of nothing");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw ShapeMismatch("concat axis");
  Shape out_shape = parts[0].shape();
  for (size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeMismatch("concat rank");
    for (int d = 0; d < rank; ++d) {
      if (d == axis) continue;
      if (s[static_cast<size_t>(d)] != out_shape[static_cast<size_t>(d)]) {
        throw ShapeMismatch("concat shapes differ off-axis");
      }
    }
    out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  std::vector<double> v(static_cast<size_t>(numel(out_shape)));
  const auto out_strides = row_major_strides(out_shape);
  int64_t axis_offset = 0;
  for (const Tensor& part : parts) {
    const auto in_strides = row_major_strides(part.shape());
    for_each_window(part.shape(), [&](const std::vector<int64_t>& idx) {
      int64_t in_off = 0, out_off = 0;
      for (int d = 0; d < rank; ++d) {
        const int64_t od =
            d == axis ? idx[static_cast<size_t>(d)] + axis_offset
                      : idx[static_cast<size_t>(d)];
        in_off += idx[static_cast<size_t>(d)] * in_strides[static_cast<size_t>(d)];
        out_off += od * out_strides[static_cast<size_t>(d)];
      }
      v[static_cast<size_t>(out_off)] = part.data()[in_off];
    });
    axis_offset += part.dim(axis);
  }
  std::vector<Shape> part_shapes;
  part_shapes.reserve(parts.size());
  for (const Tensor& p : parts) part_shapes.push_back(p.shape());
  return make_op("concat", out_shape, std::move(v), parts,
                 [axis, part_shapes](const Tensor& g, const Node&) {
                   std::vector<Tensor> out;
                   int64_t off = 0;
                   for (const Shape& s : part_shapes) {
                     std::vector<int64_t> start(s.size(), 0);
                     start[static_cast<size_t>(axis)] = off;
                     std::vector<int64_t> size(s.begin(), s.end());
                     out.push_back(slice(g, start, size));
                     off += s[static_cast<size_t>(axis)];
                   }
                   return out;
                 });
}

// ---------------- image ops ----------------

namespace {

void conv_out_dims(int64_t h, int64_t w, const ConvGeom& g, int64_t* ho,
                   int64_t* wo) {
  if (h + 2 * g.ph < g.kh || w + 2 * g.pw < g.kw) {
    throw ShapeMismatch("conv window larger than padded input");
  }
  *ho = (h + 2 * g.ph - g.kh) / g.sh + 1;
  *wo = (w + 2 * g.pw - g.kw) / g.sw + 1;
}

void check_image(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeMismatch(std::string(op) + " expects [N,H,W,C], got " +
                        shape_str(x.shape()));
  }
}

}  // namespace

Tensor im2col(const Tensor& x, const ConvGeom& g) {
  check_image(x, "im2col");
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  int64_t ho = 0, wo = 0;
  conv_out_dims(h, w, g, &ho, &wo);
  const int64_t patch = g.kh * g.kw * c;
  std::vector<double> v(static_cast<size_t>(n * ho * wo * patch), 0.0);
  const double* src = x.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        double* dst = v.data() + ((b * ho + oy) * wo + ox) * patch;
        for (int64_t dy = 0; dy < g.kh; ++dy) {
          const int64_t iy = oy * g.sh - g.ph + dy;
          if (iy < 0 || iy >= h) continue;
          for (int64_t dx = 0; dx < g.kw; ++dx) {
            const int64_t ix = ox * g.sw - g.pw + dx;
            if (ix < 0 || ix >= w) continue;
            const double* cell = src + ((b * h + iy) * w + ix) * c;
            double* out_cell = dst + (dy * g.kw + dx) * c;
            std::copy(cell, cell + c, out_cell);
          }
        }
      }
    }
  }
  return make_op("im2col", {n * ho * wo, patch}, std::move(v), {x},
                 [g, shape = x.shape()](const Tensor& grad_out, const Node&) {
                   return std::vector<Tensor>{col2im(grad_out, shape, g)};
                 });
}

Tensor col2im(const Tensor& cols, Shape image_shape, const ConvGeom& g) {
  if (cols.rank() != 2 || image_shape.size() != 4) {
    throw ShapeMismatch("col2im expects [rows, patch] and [N,H,W,C]");
  }
  const int64_t n = image_shape[0], h = image_shape[1], w = image_shape[2],
                c = image_shape[3];
  int64_t ho = 0, wo = 0;
  conv_out_dims(h, w, g, &ho, &wo);
  const int64_t patch = g.kh * g.kw * c;
  if (cols.dim(0) != n * ho * wo || cols.dim(1) != patch) {
    throw ShapeMismatch("col2im: columns " + shape_str(cols.shape()) +
                        " incompatible with image " + shape_str(image_shape));
  }
  std::vector<double> v(static_cast<size_t>(numel(image_shape)), 0.0);
  const double* src = cols.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        const double* col = src + ((b * ho + oy) * wo + ox) * patch;
        for (int64_t dy = 0; dy < g.kh; ++dy) {
          const int64_t iy = oy * g.sh - g.ph + dy;
          if (iy < 0 || iy >= h) continue;
          for (int64_t dx = 0; dx < g.kw; ++dx) {
            const int64_t ix = ox * g.sw - g.pw + dx;
            if (ix < 0 || ix >= w) continue;
            double* cell = v.data() + ((b * h + iy) * w + ix) * c;
            const double* col_cell = col + (dy * g.kw + dx) * c;
            for (int64_t ch = 0; ch < c; ++ch) cell[ch] += col_cell[ch];
          }
        }
      }
    }
  }
  return make_op("col2im", std::move(image_shape), std::move(v), {cols},
                 [g](const Tensor& grad_out, const Node&) {
                   return std::vector<Tensor>{im2col(grad_out, g)};
                 });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int64_t stride, int64_t pad) {
  check_image(x, "conv2d");
  if (w.rank() != 4 || w.dim(2) != x.dim(3)) {
    throw ShapeMismatch("conv2d weight " + shape_str(w.shape()) +
                        " vs input " + shape_str(x.shape()));
  }
  const int64_t kh = w.dim(0), kw = w.dim(1), cin = w.dim(2), cout = w.dim(3);
  ConvGeom g{kh, kw, stride, stride, pad, pad};
  int64_t ho = 0, wo = 0;
  conv_out_dims(x.dim(1), x.dim(2), g, &ho, &wo);
  Tensor cols = im2col(x, g);
  Tensor wf = reshape(w, {kh * kw * cin, cout});
  Tensor out = matmul(cols, wf);
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.dim(0) != cout) {
      throw ShapeMismatch("conv2d bias");
    }
    out = add_rowvec(out, bias);
  }
  return reshape(out, {x.dim(0), ho, wo, cout});
}

Tensor transpose_conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int64_t stride, int64_t pad, int64_t out_pad) {
  check_image(x, "transpose_conv2d");
  if (w.rank() != 4 || w.dim(0) != x.dim(3)) {
    throw ShapeMismatch("transpose_conv2d weight " + shape_str(w.shape()) +
                        " vs input " + shape_str(x.shape()));
  }
  if (out_pad < 0 || out_pad >= stride) {
    throw ShapeMismatch("transpose_conv2d output padding must be in [0,stride)");
  }
  const int64_t n = x.dim(0), h = x.dim(1), win = x.dim(2);
  const int64_t cin = w.dim(0), kh = w.dim(1), kw = w.dim(2), cout = w.dim(3);
  const int64_t out_h = (h - 1) * stride + kh - 2 * pad + out_pad;
  const int64_t out_w = (win - 1) * stride + kw - 2 * pad + out_pad;
  if (out_h < 1 || out_w < 1) throw ShapeMismatch("transpose_conv2d output");
  Tensor xf = reshape(x, {n * h * win, cin});
  Tensor wf = reshape(w, {cin, kh * kw * cout});
  Tensor cols = matmul(xf, wf);
  ConvGeom g{kh, kw, stride, stride, pad, pad};
  Tensor out = col2im(cols, {n, out_h, out_w, cout}, g);
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.dim(0) != cout) {
      throw ShapeMismatch("transpose_conv2d bias");
    }
    out = reshape(add_rowvec(reshape(out, {n * out_h * out_w, cout}), bias),
                  {n, out_h, out_w, cout});
  }
  return out;
}

Tensor avg_pool2d(const Tensor& x, int64_t kernel, int64_t stride) {
  check_image(x, "avg_pool2d");
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (kernel < 1 || stride < 1 || h < kernel || w < kernel ||
      (h - kernel) % stride != 0 || (w - kernel) % stride != 0) {
    throw ShapeMismatch("avg_pool2d: kernel " + std::to_string(kernel) +
                        " stride " + std::to_string(stride) +
                        " does not tile " + shape_str(x.shape()));
  }
  const int64_t ho = (h - kernel) / stride + 1;
  const int64_t wo = (w - kernel) / stride + 1;
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  std::vector<double> v(static_cast<size_t>(n * ho * wo * c), 0.0);
  const double* src = x.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        double* out_cell = v.data() + ((b * ho + oy) * wo + ox) * c;
        for (int64_t dy = 0; dy < kernel; ++dy) {
          for (int64_t dx = 0; dx < kernel; ++dx) {
            const double* cell =
                src + ((b * h + oy * stride + dy) * w + ox * stride + dx) * c;
            for (int64_t ch = 0; ch < c; ++ch) out_cell[ch] += cell[ch];
          }
        }
        for (int64_t ch = 0; ch < c; ++ch) out_cell[ch] *= inv;
      }
    }
  }
  return make_op("avg_pool2d", {n, ho, wo, c}, std::move(v), {x},
                 [kernel, stride, h, w](const Tensor& g, const Node&) {
                   Tensor spread = avg_unpool2d(g, kernel, stride, h, w);
                   return std::vector<Tensor>{
                       scale(spread, 1.0 / static_cast<double>(kernel * kernel))};
                 });
}

Tensor avg_unpool2d(const Tensor& g, int64_t kernel, int64_t stride,
                    int64_t out_h, int64_t out_w) {
  check_image(g, "avg_unpool2d");
  const int64_t n = g.dim(0), ho = g.dim(1), wo = g.dim(2), c = g.dim(3);
  if ((out_h - kernel) / stride + 1 != ho || (out_w - kernel) / stride + 1 != wo ||
      (out_h - kernel) % stride != 0 || (out_w - kernel) % stride != 0) {
    throw ShapeMismatch("avg_unpool2d geometry");
  }
  std::vector<double> v(static_cast<size_t>(n * out_h * out_w * c), 0.0);
  const double* src = g.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t oy = 0; oy < ho; ++oy) {
      for (int64_t ox = 0; ox < wo; ++ox) {
        const double* cell = src + ((b * ho + oy) * wo + ox) * c;
        for (int64_t dy = 0; dy < kernel; ++dy) {
          for (int64_t dx = 0; dx < kernel; ++dx) {
            double* out_cell =
                v.data() +
                ((b * out_h + oy * stride + dy) * out_w + ox * stride + dx) * c;
            for (int64_t ch = 0; ch < c; ++ch) out_cell[ch] += cell[ch];
          }
        }
      }
    }
  }
  return make_op("avg_unpool2d", {n, out_h, out_w, c}, std::move(v), {g},
                 [kernel, stride](const Tensor& grad_out, const Node&) {
                   Tensor pooled = avg_pool2d(grad_out, kernel, stride);
                   return std::vector<Tensor>{
                       scale(pooled, static_cast<double>(kernel * kernel))};
                 });
}

Tensor global_avg_pool(const Tensor& x) {
  check_image(x, "global_avg_pool");
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const double inv = 1.0 / static_cast<double>(h * w);
  std::vector<double> v(static_cast<size_t>(n * c), 0.0);
  const double* src = x.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t i = 0; i < h * w; ++i) {
      const double* cell = src + (b * h * w + i) * c;
      double* out_row = v.data() + b * c;
      for (int64_t ch = 0; ch < c; ++ch) out_row[ch] += cell[ch];
    }
    for (int64_t ch = 0; ch < c; ++ch) v[static_cast<size_t>(b * c + ch)] *= inv;
  }
  return make_op("global_avg_pool", {n, c}, std::move(v), {x},
                 [h, w](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{
                       scale(tile_spatial(g, h, w),
                             1.0 / static_cast<double>(h * w))};
                 });
}

Tensor tile_spatial(const Tensor& v, int64_t h, int64_t w) {
  if (v.rank() != 2) throw ShapeMismatch("tile_spatial expects [N,C]");
  const int64_t n = v.dim(0), c = v.dim(1);
  std::vector<double> out(static_cast<size_t>(n * h * w * c));
  for (int64_t b = 0; b < n; ++b) {
    const double* row = v.data() + b * c;
    for (int64_t i = 0; i < h * w; ++i) {
      std::copy(row, row + c, out.data() + (b * h * w + i) * c);
    }
  }
  return make_op("tile_spatial", {n, h, w, c}, std::move(out), {v},
                 [h, w](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{
                       scale(global_avg_pool(g), static_cast<double>(h * w))};
                 });
}

namespace {

struct LerpTap {
  int64_t lo, hi;
  double frac;
};

// align-corners-false sampling position for output index i at integer factor f
LerpTap bilinear_tap(int64_t i, int64_t factor, int64_t in_dim) {
  double pos = (static_cast<double>(i) + 0.5) / static_cast<double>(factor) - 0.5;
  if (pos < 0.0) pos = 0.0;
  const double max_pos = static_cast<double>(in_dim - 1);
  if (pos > max_pos) pos = max_pos;
  LerpTap t;
  t.lo = static_cast<int64_t>(pos);
  t.hi = std::min(t.lo + 1, in_dim - 1);
  t.frac = pos - static_cast<double>(t.lo);
  return t;
}

}  // namespace

Tensor bilinear_upsize(const Tensor& x, int64_t factor) {
  check_image(x, "bilinear_upsize");
  if (factor < 1) throw ShapeMismatch("bilinear_upsize factor < 1");
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int64_t oh = h * factor, ow = w * factor;
  std::vector<double> v(static_cast<size_t>(n * oh * ow * c), 0.0);
  const double* src = x.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t oy = 0; oy < oh; ++oy) {
      const LerpTap ty = bilinear_tap(oy, factor, h);
      for (int64_t ox = 0; ox < ow; ++ox) {
        const LerpTap tx = bilinear_tap(ox, factor, w);
        const double* r00 = src + ((b * h + ty.lo) * w + tx.lo) * c;
        const double* r01 = src + ((b * h + ty.lo) * w + tx.hi) * c;
        const double* r10 = src + ((b * h + ty.hi) * w + tx.lo) * c;
        const double* r11 = src + ((b * h + ty.hi) * w + tx.hi) * c;
        double* out_cell = v.data() + ((b * oh + oy) * ow + ox) * c;
        const double w00 = (1.0 - ty.frac) * (1.0 - tx.frac);
        const double w01 = (1.0 - ty.frac) * tx.frac;
        const double w10 = ty.frac * (1.0 - tx.frac);
        const double w11 = ty.frac * tx.frac;
        for (int64_t ch = 0; ch < c; ++ch) {
          out_cell[ch] =
              w00 * r00[ch] + w01 * r01[ch] + w10 * r10[ch] + w11 * r11[ch];
        }
      }
    }
  }
  return make_op("bilinear_upsize", {n, oh, ow, c}, std::move(v), {x},
                 [factor, h, w](const Tensor& g, const Node&) {
                   return std::vector<Tensor>{
                       bilinear_upsize_adjoint(g, factor, h, w)};
                 });
}

Tensor bilinear_upsize_adjoint(const Tensor& g, int64_t factor, int64_t in_h,
                               int64_t in_w) {
  check_image(g, "bilinear_upsize_adjoint");
  const int64_t n = g.dim(0), oh = g.dim(1), ow = g.dim(2), c = g.dim(3);
  if (oh != in_h * factor || ow != in_w * factor) {
    throw ShapeMismatch("bilinear_upsize_adjoint geometry");
  }
  std::vector<double> v(static_cast<size_t>(n * in_h * in_w * c), 0.0);
  const double* src = g.data();
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t oy = 0; oy < oh; ++oy) {
      const LerpTap ty = bilinear_tap(oy, factor, in_h);
      for (int64_t ox = 0; ox < ow; ++ox) {
        const LerpTap tx = bilinear_tap(ox, factor, in_w);
        const double* cell = src + ((b * oh + oy) * ow + ox) * c;
        double* r00 = v.data() + ((b * in_h + ty.lo) * in_w + tx.lo) * c;
        double* r01 = v.data() + ((b * in_h + ty.lo) * in_w + tx.hi) * c;
        double* r10 = v.data() + ((b * in_h + ty.hi) * in_w + tx.lo) * c;
        double* r11 = v.data() + ((b * in_h + ty.hi) * in_w + tx.hi) * c;
        const double w00 = (1.0 - ty.frac) * (1.0 - tx.frac);
        const double w01 = (1.0 - ty.frac) * tx.frac;
        const double w10 = ty.frac * (1.0 - tx.frac);
        const double w11 = ty.frac * tx.frac;
        for (int64_t ch = 0; ch < c; ++ch) {
          r00[ch] += w00 * cell[ch];
          r01[ch] += w01 * cell[ch];
          r10[ch] += w10 * cell[ch];
          r11[ch] += w11 * cell[ch];
        }
      }
    }
  }
  return make_op("bilinear_upsize_adjoint", {n, in_h, in_w, c}, std::move(v),
                 {g}, [factor](const Tensor& grad_out, const Node&) {
                   return std::vector<Tensor>{
                       bilinear_upsize(grad_out, factor)};
                 });
}

// ---------------- differentiation ----------------

std::vector<Tensor> grad(const Tensor& scalar, const std::vector<Tensor>& wrt,
                         bool create_graph) {
  if (!scalar.defined() || scalar.size() != 1) {
    throw NotScalar("grad target must have shape [1]");
  }
  for (const Tensor& t : wrt) {
    if (!t.defined() || !t.requires_grad()) {
      throw GradDisabled("grad target does not require grad");
    }
  }

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::unordered_set<TensorData*> members;
  members.insert(scalar.impl());
  if (scalar.node()) {
    std::vector<Node*> stack{scalar.node().get()};
    seen.insert(scalar.node().get());
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const Tensor& p : n->parents) {
        members.insert(p.impl());
        Node* pn = p.node().get();
        if (pn != nullptr && seen.insert(pn).second) stack.push_back(pn);
      }
    }
  }
  for (const Tensor& t : wrt) {
    if (members.find(t.impl()) == members.end()) {
      throw Unreachable("tensor not part of the scalar's graph");
    }
  }

  // Reverse topological order; ids are assigned monotonically at op crea-
  // tion, so descending id order visits every consumer before its producer.
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  std::unordered_map<TensorData*, Tensor> acc;
  acc.emplace(scalar.impl(), Tensor::full({1}, 1.0));

  ScopedGradMode mode(create_graph);
  for (Node* n : order) {
    auto out_data = n->out.lock();
    if (!out_data) throw Error("node output expired mid-backward");
    auto it = acc.find(out_data.get());
    if (it == acc.end()) continue;
    const Tensor gout = it->second;
    std::vector<Tensor> contribs = n->backward(gout, *n);
    if (contribs.size() != n->parents.size()) {
      throw Error(std::string("backward arity mismatch in op ") + n->op);
    }
    for (size_t i = 0; i < contribs.size(); ++i) {
      if (!contribs[i].defined()) continue;
      TensorData* key = n->parents[i].impl();
      auto slot = acc.find(key);
      if (slot == acc.end()) {
        acc.emplace(key, contribs[i]);
      } else {
        slot->second = add(slot->second, contribs[i]);
      }
    }
  }

  std::vector<Tensor> results;
  results.reserve(wrt.size());
  for (const Tensor& t : wrt) {
    auto it = acc.find(t.impl());
    results.push_back(it != acc.end() ? it->second : Tensor::zeros(t.shape()));
  }
  return results;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& fn,
                               const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw Error("finite_difference_check: eps must be > 0");

  Tensor x = point.detach();
  x.set_requires_grad(true);
  Tensor y = fn(x);
  if (y.size() != 1) throw NotScalar("finite_difference_check target");
  y.check_finite("finite_difference_check: fn(point)");
  Tensor analytic = grad(y, {x}, false)[0];
  analytic.check_finite("finite_difference_check: analytic gradient");

  double worst = 0.0;
  for (int64_t i = 0; i < point.size(); ++i) {
    Tensor lo = point.detach();
    Tensor hi = point.detach();
    lo.data()[i] -= eps;
    hi.data()[i] += eps;
    lo.set_requires_grad(true);  // fn may build nested gradients
    hi.set_requires_grad(true);
    const double f_hi = fn(hi).item();
    const double f_lo = fn(lo).item();
    if (!std::isfinite(f_hi) || !std::isfinite(f_lo)) {
      throw NonFiniteValue("finite_difference_check probe");
    }
    const double numeric = (f_hi - f_lo) / (2.0 * eps);
    const double a = analytic.data()[i];
    const double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace igam
