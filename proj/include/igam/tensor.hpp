#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "igam/errors.hpp"
#include "igam/rng.hpp"

namespace igam {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
class Tensor;

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::shared_ptr<Node> node;  // producing op; null for leaves
  bool requires_grad = false;
};

// Operation record on the dynamic tape. Nodes are created in topological
// order (monotone ids) and hold their inputs alive; the output is held weakly
// to keep the graph an acyclic ownership DAG.
struct Node {
  uint64_t id = 0;
  const char* op = "";
  std::vector<Tensor> parents;
  std::weak_ptr<TensorData> out;
  // dL/d(parent_i) given dL/d(output); an undefined Tensor marks a
  // non-differentiable slot.
  std::function<std::vector<Tensor>(const Tensor& grad_out, const Node& self)>
      backward;

  Tensor output() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
  static Tensor normal(Shape shape, double mean, double stddev, Rng& rng);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int64_t size() const { return static_cast<int64_t>(data_->values.size()); }
  int64_t dim(int i) const { return data_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(data_->shape.size()); }

  double* data() { return data_->values.data(); }
  const double* data() const { return data_->values.data(); }
  std::vector<double>& values() { return data_->values; }
  const std::vector<double>& values() const { return data_->values; }
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  const std::shared_ptr<Node>& node() const { return data_->node; }
  TensorData* impl() const { return data_.get(); }
  const std::shared_ptr<TensorData>& handle() const { return data_; }

  // Leaf copy of the values, detached from any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }
  Tensor reshaped_view(Shape shape) const;  // detached, shares nothing

  bool all_finite() const;
  void check_finite(const std::string& where) const;

 private:
  std::shared_ptr<TensorData> data_;
};

// ---- value-level helpers (never touch the graph) ----

Tensor sign_of(const Tensor& t);
Tensor clamp_values(const Tensor& t, double lo, double hi);
bool same_values(const Tensor& a, const Tensor& b);        // bitwise
double max_abs_diff(const Tensor& a, const Tensor& b);
double dot_values(const Tensor& a, const Tensor& b);
double norm2_values(const Tensor& a);
std::vector<int> argmax_rows(const Tensor& logits);        // [N,K] -> N picks
uint64_t hash_values(const Tensor& t);

}  // namespace igam
