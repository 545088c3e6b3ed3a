#include "igam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace igam {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 1) throw ShapeMismatch("dimension < 1 in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Node::output() const {
  auto locked = out.lock();
  if (!locked) throw Error("graph node output expired during backward");
  return Tensor(locked);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto data = std::make_shared<TensorData>();
  const int64_t n = numel(shape);
  data->shape = std::move(shape);
  data->values.assign(static_cast<size_t>(n), value);
  return Tensor(std::move(data));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeMismatch("from: " + shape_str(shape) + " vs " +
                        std::to_string(values.size()) + " values");
  }
  auto data = std::make_shared<TensorData>();
  data->shape = std::move(shape);
  data->values = std::move(values);
  return Tensor(std::move(data));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::normal(Shape shape, double mean, double stddev, Rng& rng) {
  Tensor t = zeros(std::move(shape));
  for (double& v : t.values()) v = mean + stddev * rng.normal();
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw NotScalar("item() on shape " + shape_str(shape()));
  return data_->values[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  data_->requires_grad = flag;
  return *this;
}

Tensor Tensor::detach() const {
  auto data = std::make_shared<TensorData>();
  data->shape = data_->shape;
  data->values = data_->values;
  return Tensor(std::move(data));
}

Tensor Tensor::reshaped_view(Shape shape) const {
  if (numel(shape) != size()) {
    throw ShapeMismatch("reshaped_view: " + shape_str(shape) + " from " +
                        shape_str(this->shape()));
  }
  Tensor t = detach();
  t.data_->shape = std::move(shape);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_->values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(const std::string& where) const {
  if (!all_finite()) throw NonFiniteValue(where);
}

Tensor sign_of(const Tensor& t) {
  Tensor out = Tensor::zeros(t.shape());
  const double* src = t.data();
  double* dst = out.data();
  for (int64_t i = 0; i < t.size(); ++i) {
    dst[i] = src[i] > 0.0 ? 1.0 : (src[i] < 0.0 ? -1.0 : 0.0);
  }
  return out;
}

Tensor clamp_values(const Tensor& t, double lo, double hi) {
  Tensor out = Tensor::zeros(t.shape());
  const double* src = t.data();
  double* dst = out.data();
  for (int64_t i = 0; i < t.size(); ++i) {
    double v = src[i] > lo ? src[i] : lo;
    dst[i] = v < hi ? v : hi;
  }
  return out;
}

bool same_values(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(),
                     sizeof(double) * static_cast<size_t>(a.size())) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("max_abs_diff: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  }
  return m;
}

double dot_values(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeMismatch("dot_values size mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

double norm2_values(const Tensor& a) { return std::sqrt(dot_values(a, a)); }

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeMismatch("argmax_rows expects [N,K]");
  const int64_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;  // ties keep the lowest index
    }
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

uint64_t hash_values(const Tensor& t) {
  uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
  const size_t nbytes = sizeof(double) * static_cast<size_t>(t.size());
  for (size_t i = 0; i < nbytes; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace igam
