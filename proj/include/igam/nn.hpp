#pragma once

#include <string>
#include <vector>

#include "igam/autodiff.hpp"
#include "igam/tensor.hpp"

namespace igam {

struct Layer {
  enum class Kind { conv, dense, relu, avg_pool, global_avg_pool, flatten, sigmoid };
  Kind kind{};
  Tensor weight;  // conv: [kh,kw,Cin,Cout]; dense: [In,Out]
  Tensor bias;    // [Cout] / [Out]
  int64_t kernel = 0, stride = 1, pad = 0;
  bool frozen_weight = false, frozen_bias = false;
};

struct ParamRef {
  std::string name;
  Tensor tensor;
  bool frozen;
  size_t layer;
  bool is_bias;
};

struct Model {
  std::string arch;
  std::string name;
  Shape input_shape;  // [H,W,C]
  int num_classes = 0;
  std::vector<Layer> layers;

  // Forward through every layer; input [N,H,W,C] (or [N,D] for dense-only).
  Tensor forward(const Tensor& x) const;
  // Same but skipping a trailing sigmoid; used for stable log-sigmoid losses.
  Tensor forward_score(const Tensor& x) const;

  std::vector<ParamRef> parameters() const;
  std::vector<Tensor> trainable() const;  // unfrozen tensors, parameter order
  int64_t num_params() const;
  uint64_t param_hash() const;
  uint64_t frozen_param_hash() const;
};

// Deterministic preset construction. Known presets:
//   mlp-2        flatten, dense(32), relu, dense(k)
//   linear       flatten, dense(k)
//   small-cnn    two stride-2 convs (8, 16 ch), dense(64), dense(k)
//   mnist-cnn2   two 5x5 convs (8, 16 ch) with 2x2 avg pooling, dense(128), dense(k)
//   disc-cnn-4   stride-2 convs 8-16-32-64, gap, dense(1), sigmoid
//   disc-cnn-5   stride-2 convs 16-32-64-128-256, gap, dense(1), sigmoid
Model build(const std::string& preset, Shape input_shape, int num_classes,
            uint64_t seed);

// Copy with every parameter frozen except a freshly initialized final logit
// layer (optionally with a new class count). Backbone tensors are shared
// with the source model; the new head is independent.
Model freeze_all_but_logits(const Model& m, int num_classes, uint64_t seed);

// Deep copy: parameters no longer shared.
Model clone_model(const Model& m);

// p <- p - lr * g for each unfrozen parameter; grads align with trainable().
void sgd_step(Model& m, const std::vector<Tensor>& grads, double lr);

// SGD with optional momentum over an explicit parameter list; ascend() flips
// the update direction (used for the discriminator's gradient ascent).
struct SgdMomentum {
  double lr = 0.01;
  double momentum = 0.0;
  std::vector<Tensor> velocity;

  void step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads);
  void ascend(const std::vector<Tensor>& params, const std::vector<Tensor>& grads);
  void step(Model& m, const std::vector<Tensor>& grads);
  void ascend(Model& m, const std::vector<Tensor>& grads);

 private:
  void apply(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
             double direction);
};

Shape infer_output_shape(const Model& m, const Shape& input_with_batch);

}  // namespace igam
