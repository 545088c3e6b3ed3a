#pragma once

#include <optional>

#include "igam/nn.hpp"
#include "igam/transforms.hpp"

namespace igam {

// A model seen from the target task's input space, optionally through an
// input adapter (a finetuned teacher evaluated on target images keeps its
// transform attached). Copies share the underlying parameter tensors.
struct TargetModel {
  Model model;
  std::optional<InputTransform> adapter;

  TargetModel(Model m) : model(std::move(m)) {}  // NOLINT: implicit by design
  TargetModel(Model m, InputTransform t)
      : model(std::move(m)), adapter(std::move(t)) {}

  Tensor logits(const Tensor& x) const {
    return adapter ? model.forward(apply(*adapter, x)) : model.forward(x);
  }

  Shape input_shape() const {
    return adapter ? adapter->target_shape : model.input_shape;
  }
};

}  // namespace igam
