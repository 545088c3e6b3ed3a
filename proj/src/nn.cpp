#include "igam/nn.hpp"

#include <cmath>

#include "igam/kernels.hpp"
#include "igam/rng.hpp"

namespace igam {

namespace {

Tensor he_uniform(Shape shape, int64_t fan_in, Rng rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::uniform(std::move(shape), -bound, bound, rng);
  t.set_requires_grad(true);
  return t;
}

Tensor zero_param(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Layer conv_layer(int64_t kernel, int64_t cin, int64_t cout, int64_t stride,
                 int64_t pad, Rng rng) {
  Layer l;
  l.kind = Layer::Kind::conv;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  l.weight = he_uniform({kernel, kernel, cin, cout}, kernel * kernel * cin,
                        rng.stream("w"));
  l.bias = zero_param({cout});
  return l;
}

Layer dense_layer(int64_t in, int64_t out, Rng rng) {
  Layer l;
  l.kind = Layer::Kind::dense;
  l.weight = he_uniform({in, out}, in, rng.stream("w"));
  l.bias = zero_param({out});
  return l;
}

Layer simple_layer(Layer::Kind kind) {
  Layer l;
  l.kind = kind;
  return l;
}

Layer pool_layer(int64_t kernel, int64_t stride) {
  Layer l;
  l.kind = Layer::Kind::avg_pool;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

Shape layer_output_shape(const Layer& l, const Shape& in) {
  switch (l.kind) {
    case Layer::Kind::conv: {
      if (in.size() != 4 || in[3] != l.weight.dim(2)) {
        throw IncompatibleShape("conv input " + shape_str(in));
      }
      const int64_t ho = (in[1] + 2 * l.pad - l.kernel) / l.stride + 1;
      const int64_t wo = (in[2] + 2 * l.pad - l.kernel) / l.stride + 1;
      if (in[1] + 2 * l.pad < l.kernel || in[2] + 2 * l.pad < l.kernel) {
        throw IncompatibleShape("conv window exceeds input");
      }
      return {in[0], ho, wo, l.weight.dim(3)};
    }
    case Layer::Kind::dense:
      if (in.size() != 2 || in[1] != l.weight.dim(0)) {
        throw IncompatibleShape("dense input " + shape_str(in) + " vs weight " +
                                shape_str(l.weight.shape()));
      }
      return {in[0], l.weight.dim(1)};
    case Layer::Kind::relu:
    case Layer::Kind::sigmoid:
      return in;
    case Layer::Kind::avg_pool: {
      if (in.size() != 4 || in[1] < l.kernel || in[2] < l.kernel ||
          (in[1] - l.kernel) % l.stride != 0 ||
          (in[2] - l.kernel) % l.stride != 0) {
        throw IncompatibleShape("avg_pool on " + shape_str(in));
      }
      return {in[0], (in[1] - l.kernel) / l.stride + 1,
              (in[2] - l.kernel) / l.stride + 1, in[3]};
    }
    case Layer::Kind::global_avg_pool:
      if (in.size() != 4) throw IncompatibleShape("gap input");
      return {in[0], in[3]};
    case Layer::Kind::flatten: {
      int64_t d = 1;
      for (size_t i = 1; i < in.size(); ++i) d *= in[i];
      return {in[0], d};
    }
  }
  throw Error("unknown layer kind");
}

Tensor layer_forward(const Layer& l, const Tensor& x) {
  switch (l.kind) {
    case Layer::Kind::conv:
      return conv2d(x, l.weight, l.bias, l.stride, l.pad);
    case Layer::Kind::dense:
      return add_rowvec(matmul(x, l.weight), l.bias);
    case Layer::Kind::relu:
      return relu(x);
    case Layer::Kind::sigmoid:
      return sigmoid(x);
    case Layer::Kind::avg_pool:
      return avg_pool2d(x, l.kernel, l.stride);
    case Layer::Kind::global_avg_pool:
      return global_avg_pool(x);
    case Layer::Kind::flatten: {
      int64_t d = 1;
      for (int i = 1; i < x.rank(); ++i) d *= x.dim(i);
      return reshape(x, {x.dim(0), d});
    }
  }
  throw Error("unknown layer kind");
}

}  // namespace

Tensor Model::forward(const Tensor& x) const {
  Tensor h = x;
  for (const Layer& l : layers) h = layer_forward(l, h);
  return h;
}

Tensor Model::forward_score(const Tensor& x) const {
  Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (i + 1 == layers.size() && layers[i].kind == Layer::Kind::sigmoid) break;
    h = layer_forward(layers[i], h);
  }
  return h;
}

std::vector<ParamRef> Model::parameters() const {
  std::vector<ParamRef> out;
  for (size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (!l.weight.defined()) continue;
    const std::string base = "layer" + std::to_string(i);
    out.push_back({base + ".weight", l.weight, l.frozen_weight, i, false});
    if (l.bias.defined()) {
      out.push_back({base + ".bias", l.bias, l.frozen_bias, i, true});
    }
  }
  return out;
}

std::vector<Tensor> Model::trainable() const {
  std::vector<Tensor> out;
  for (const ParamRef& p : parameters()) {
    if (!p.frozen) out.push_back(p.tensor);
  }
  return out;
}

int64_t Model::num_params() const {
  int64_t n = 0;
  for (const ParamRef& p : parameters()) n += p.tensor.size();
  return n;
}

uint64_t Model::param_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const ParamRef& p : parameters()) {
    h ^= hash_values(p.tensor);
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t Model::frozen_param_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const ParamRef& p : parameters()) {
    if (!p.frozen) continue;
    h ^= hash_values(p.tensor);
    h *= 0x100000001b3ULL;
  }
  return h;
}

Shape infer_output_shape(const Model& m, const Shape& input_with_batch) {
  Shape s = input_with_batch;
  for (const Layer& l : m.layers) s = layer_output_shape(l, s);
  return s;
}

Model build(const std::string& preset, Shape input_shape, int num_classes,
            uint64_t seed) {
  if (input_shape.size() != 3) {
    throw IncompatibleShape("input_shape must be [H,W,C], got " +
                            shape_str(input_shape));
  }
  if (num_classes < 1) throw IncompatibleShape("num_classes < 1");
  const int64_t c = input_shape[2];
  Rng root(seed);
  Model m;
  m.arch = preset;
  m.name = preset;
  m.input_shape = input_shape;
  m.num_classes = num_classes;

  auto rng_for = [&](size_t idx) {
    return root.stream("init/layer" + std::to_string(idx));
  };
  auto push_conv = [&](int64_t k, int64_t cin, int64_t cout, int64_t stride,
                       int64_t pad) {
    m.layers.push_back(
        conv_layer(k, cin, cout, stride, pad, rng_for(m.layers.size())));
  };
  auto push_dense = [&](int64_t in, int64_t out) {
    m.layers.push_back(dense_layer(in, out, rng_for(m.layers.size())));
  };
  auto flat_dim = [&]() {
    Shape s = infer_output_shape(m, {1, input_shape[0], input_shape[1], c});
    return s.back();
  };

  if (preset == "mlp-2") {
    m.layers.push_back(simple_layer(Layer::Kind::flatten));
    push_dense(flat_dim(), 32);
    m.layers.push_back(simple_layer(Layer::Kind::relu));
    push_dense(32, num_classes);
  } else if (preset == "linear") {
    m.layers.push_back(simple_layer(Layer::Kind::flatten));
    push_dense(flat_dim(), num_classes);
  } else if (preset == "small-cnn") {
    push_conv(3, c, 8, 2, 1);
    m.layers.push_back(simple_layer(Layer::Kind::relu));
    push_conv(3, 8, 16, 2, 1);
    m.layers.push_back(simple_layer(Layer::Kind::relu));
    m.layers.push_back(simple_layer(Layer::Kind::flatten));
    push_dense(flat_dim(), 64);
    m.layers.push_back(simple_layer(Layer::Kind::relu));
    push_dense(64, num_classes);
  } else if (preset == "mnist-cnn2") {
    if (input_shape[0] % 4 != 0 || input_shape[1] % 4 != 0) {
      throw IncompatibleShape("mnist-cnn2 needs H,W divisible by 4");
    }
    push_conv(5, c, 8, 1, 2);
    m.layers.push_back(simple_layer(Layer::Kind::relu));
    m.layers.push_back(pool_layer(2, 2));
    push_conv(5, 8, 16, 1, 2);
    m.layers.push_back(simple_layer(Layer::Kind::relu));
    m.layers.push_back(pool_layer(2, 2));
    m.layers.push_back(simple_layer(Layer::Kind::flatten));
    push_dense(flat_dim(), 128);
    m.layers.push_back(simple_layer(Layer::Kind::relu));
    push_dense(128, num_classes);
  } else if (preset == "disc-cnn-4" || preset == "disc-cnn-5") {
    std::vector<int64_t> channels =
        preset == "disc-cnn-4" ? std::vector<int64_t>{8, 16, 32, 64}
                               : std::vector<int64_t>{16, 32, 64, 128, 256};
    int64_t cin = c;
    for (int64_t cout : channels) {
      push_conv(3, cin, cout, 2, 1);
      m.layers.push_back(simple_layer(Layer::Kind::relu));
      cin = cout;
    }
    m.layers.push_back(simple_layer(Layer::Kind::global_avg_pool));
    push_dense(cin, num_classes);
    m.layers.push_back(simple_layer(Layer::Kind::sigmoid));
  } else {
    throw UnknownPreset(preset);
  }

  // validates shape compatibility end to end
  infer_output_shape(m, {1, input_shape[0], input_shape[1], c});
  return m;
}

Model freeze_all_but_logits(const Model& m, int num_classes, uint64_t seed) {
  Model out = m;
  int logit_idx = -1;
  for (size_t i = 0; i < out.layers.size(); ++i) {
    if (out.layers[i].kind == Layer::Kind::dense) {
      logit_idx = static_cast<int>(i);
    }
  }
  if (logit_idx < 0) throw NoLogitLayer(m.arch);
  for (size_t i = 0; i < out.layers.size(); ++i) {
    out.layers[i].frozen_weight = true;
    out.layers[i].frozen_bias = true;
  }
  Layer& logit = out.layers[static_cast<size_t>(logit_idx)];
  const int64_t in_dim = logit.weight.dim(0);
  Rng rng(seed);
  logit.weight = he_uniform({in_dim, num_classes}, in_dim, rng.stream("logit/w"));
  logit.bias = zero_param({num_classes});
  logit.frozen_weight = false;
  logit.frozen_bias = false;
  out.num_classes = num_classes;
  return out;
}

Model clone_model(const Model& m) {
  Model out = m;
  for (Layer& l : out.layers) {
    if (l.weight.defined()) {
      bool rg = l.weight.requires_grad();
      l.weight = l.weight.detach();
      l.weight.set_requires_grad(rg);
    }
    if (l.bias.defined()) {
      bool rg = l.bias.requires_grad();
      l.bias = l.bias.detach();
      l.bias.set_requires_grad(rg);
    }
  }
  return out;
}

void sgd_step(Model& m, const std::vector<Tensor>& grads, double lr) {
  std::vector<Tensor> params = m.trainable();
  if (params.size() != grads.size()) {
    throw ShapeMismatch("sgd_step: " + std::to_string(grads.size()) +
                        " grads for " + std::to_string(params.size()) +
                        " trainable parameters");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ShapeMismatch("sgd_step grad shape");
    }
    kernels::active().axpy(params[i].data(), -lr, grads[i].data(),
                           params[i].size());
  }
}

void SgdMomentum::apply(const std::vector<Tensor>& params,
                        const std::vector<Tensor>& grads, double direction) {
  if (params.size() != grads.size()) {
    throw ShapeMismatch("SgdMomentum: grads misaligned with parameters");
  }
  if (velocity.empty()) {
    for (const Tensor& p : params) velocity.push_back(Tensor::zeros(p.shape()));
  }
  if (velocity.size() != params.size()) {
    throw ShapeMismatch("SgdMomentum: stale velocity state");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ShapeMismatch("SgdMomentum grad shape");
    }
    Tensor& v = velocity[i];
    // v <- momentum*v + g ; p <- p - direction*lr*v
    kernels::active().affine(v.data(), v.data(), momentum, 0.0, v.size());
    kernels::active().axpy(v.data(), 1.0, grads[i].data(), v.size());
    Tensor p = params[i];
    kernels::active().axpy(p.data(), -direction * lr, v.data(), p.size());
  }
}

void SgdMomentum::step(const std::vector<Tensor>& params,
                       const std::vector<Tensor>& grads) {
  apply(params, grads, 1.0);
}

void SgdMomentum::ascend(const std::vector<Tensor>& params,
                         const std::vector<Tensor>& grads) {
  apply(params, grads, -1.0);
}

void SgdMomentum::step(Model& m, const std::vector<Tensor>& grads) {
  apply(m.trainable(), grads, 1.0);
}

void SgdMomentum::ascend(Model& m, const std::vector<Tensor>& grads) {
  apply(m.trainable(), grads, -1.0);
}

}  // namespace igam
