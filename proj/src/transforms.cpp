#include "igam/transforms.hpp"

#include <cmath>

namespace igam {

namespace {

void check_hwc(const Shape& s, const char* what) {
  if (s.size() != 3) {
    throw IncompatibleShape(std::string(what) + " must be [H,W,C], got " +
                            shape_str(s));
  }
}

Tensor he_uniform_param(Shape shape, int64_t fan_in, Rng rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor t = Tensor::uniform(std::move(shape), -bound, bound, rng);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

std::vector<Tensor> InputTransform::trainable_params() const {
  std::vector<Tensor> out;
  if (kind == Kind::transpose_conv) {
    out.push_back(tc_weight);
    out.push_back(tc_bias);
  }
  for (const InputTransform& child : children) {
    for (const Tensor& t : child.trainable_params()) out.push_back(t);
  }
  return out;
}

std::string InputTransform::describe() const {
  switch (kind) {
    case Kind::identity: return "identity";
    case Kind::avgpool_resize: return "avgpool_resize/" + std::to_string(factor);
    case Kind::bilinear_upsize: return "bilinear_upsize/" + std::to_string(factor);
    case Kind::center_crop: return "center_crop";
    case Kind::center_pad: return "center_pad";
    case Kind::random_pad: return "random_pad";
    case Kind::channel_average: return "channel_average";
    case Kind::transpose_conv: return "transpose_conv";
    case Kind::composite: {
      std::string s = "composite(";
      for (size_t i = 0; i < children.size(); ++i) {
        if (i) s += ",";
        s += children[i].describe();
      }
      return s + ")";
    }
  }
  return "?";
}

InputTransform identity_transform(Shape shape) {
  check_hwc(shape, "identity target");
  InputTransform t;
  t.kind = InputTransform::Kind::identity;
  t.target_shape = shape;
  t.source_shape = std::move(shape);
  return t;
}

InputTransform avgpool_resize_transform(Shape target, int64_t factor) {
  check_hwc(target, "avgpool_resize target");
  if (factor < 1 || target[0] % factor != 0 || target[1] % factor != 0) {
    throw IncompatibleShape("avgpool_resize factor must tile the image");
  }
  InputTransform t;
  t.kind = InputTransform::Kind::avgpool_resize;
  t.factor = factor;
  t.target_shape = target;
  t.source_shape = {target[0] / factor, target[1] / factor, target[2]};
  return t;
}

InputTransform bilinear_upsize_transform(Shape target, int64_t factor) {
  check_hwc(target, "bilinear_upsize target");
  if (factor < 1) throw IncompatibleShape("bilinear_upsize factor < 1");
  InputTransform t;
  t.kind = InputTransform::Kind::bilinear_upsize;
  t.factor = factor;
  t.target_shape = target;
  t.source_shape = {target[0] * factor, target[1] * factor, target[2]};
  return t;
}

InputTransform center_crop_transform(Shape target, int64_t crop_h,
                                     int64_t crop_w) {
  check_hwc(target, "center_crop target");
  if (crop_h < 1 || crop_w < 1 || crop_h > target[0] || crop_w > target[1]) {
    throw IncompatibleShape("center_crop window larger than image");
  }
  InputTransform t;
  t.kind = InputTransform::Kind::center_crop;
  t.target_shape = target;
  t.source_shape = {crop_h, crop_w, target[2]};
  t.offset_h = (target[0] - crop_h) / 2;
  t.offset_w = (target[1] - crop_w) / 2;
  return t;
}

namespace {

InputTransform pad_transform(Shape target, int64_t out_h, int64_t out_w,
                             InputTransform::Kind kind) {
  check_hwc(target, "pad target");
  if (out_h < target[0] || out_w < target[1]) {
    throw IncompatibleShape("pad output smaller than image");
  }
  InputTransform t;
  t.kind = kind;
  t.target_shape = target;
  t.source_shape = {out_h, out_w, target[2]};
  return t;
}

}  // namespace

InputTransform center_pad_transform(Shape target, int64_t out_h, int64_t out_w) {
  InputTransform t = pad_transform(std::move(target), out_h, out_w,
                                   InputTransform::Kind::center_pad);
  t.offset_h = (out_h - t.target_shape[0]) / 2;
  t.offset_w = (out_w - t.target_shape[1]) / 2;
  return t;
}

InputTransform random_pad_transform(Shape target, int64_t out_h, int64_t out_w) {
  return pad_transform(std::move(target), out_h, out_w,
                       InputTransform::Kind::random_pad);
}

InputTransform channel_average_transform(Shape target) {
  check_hwc(target, "channel_average target");
  InputTransform t;
  t.kind = InputTransform::Kind::channel_average;
  t.target_shape = target;
  t.source_shape = {target[0], target[1], 1};
  return t;
}

InputTransform transpose_conv_transform(Shape target, int64_t source_hw,
                                        int64_t out_channels, uint64_t seed) {
  check_hwc(target, "transpose_conv target");
  if (target[0] != target[1]) {
    throw IncompatibleShape("transpose_conv adapter expects square input");
  }
  InputTransform t;
  t.kind = InputTransform::Kind::transpose_conv;
  t.target_shape = target;
  t.source_shape = {source_hw, source_hw, out_channels};
  const int64_t base = (target[0] - 1) * t.tc_stride + t.tc_kernel;
  const int64_t need = base - source_hw;  // 2*pad - out_pad
  if (need < 0 || need / 2 > t.tc_kernel) {
    throw IncompatibleShape("transpose_conv cannot reach " +
                            std::to_string(source_hw) + " from " +
                            std::to_string(target[0]));
  }
  t.tc_out_pad = need % 2;
  t.tc_pad = (need + t.tc_out_pad) / 2;
  Rng rng(seed);
  t.tc_weight = he_uniform_param(
      {target[2], t.tc_kernel, t.tc_kernel, out_channels},
      target[2] * t.tc_kernel * t.tc_kernel, rng.stream("adapter/w"));
  t.tc_bias = Tensor::zeros({out_channels});
  t.tc_bias.set_requires_grad(true);
  return t;
}

InputTransform composite_transform(std::vector<InputTransform> children) {
  if (children.empty()) throw IncompatibleShape("empty composite transform");
  for (size_t i = 1; i < children.size(); ++i) {
    if (children[i].target_shape != children[i - 1].source_shape) {
      throw IncompatibleShape("composite children do not chain: " +
                              shape_str(children[i - 1].source_shape) + " -> " +
                              shape_str(children[i].target_shape));
    }
  }
  InputTransform t;
  t.kind = InputTransform::Kind::composite;
  t.target_shape = children.front().target_shape;
  t.source_shape = children.back().source_shape;
  t.children = std::move(children);
  return t;
}

bool has_unresolved_offset(const InputTransform& t) {
  if (t.kind == InputTransform::Kind::random_pad && t.offset_h < 0) return true;
  for (const InputTransform& child : t.children) {
    if (has_unresolved_offset(child)) return true;
  }
  return false;
}

Tensor apply(const InputTransform& t, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != t.target_shape[0] ||
      x.dim(2) != t.target_shape[1] || x.dim(3) != t.target_shape[2]) {
    throw ShapeMismatch("transform input " + shape_str(x.shape()) +
                        " vs target " + shape_str(t.target_shape));
  }
  const int64_t n = x.dim(0);
  switch (t.kind) {
    case InputTransform::Kind::identity:
      return x;
    case InputTransform::Kind::avgpool_resize:
      return avg_pool2d(x, t.factor, t.factor);
    case InputTransform::Kind::bilinear_upsize:
      return bilinear_upsize(x, t.factor);
    case InputTransform::Kind::center_crop:
      return slice(x, {0, t.offset_h, t.offset_w, 0},
                   {n, t.source_shape[0], t.source_shape[1], t.source_shape[2]});
    case InputTransform::Kind::center_pad:
    case InputTransform::Kind::random_pad: {
      if (t.offset_h < 0 || t.offset_w < 0) {
        throw Unresolved("random_pad offset not sampled");
      }
      const int64_t after_h = t.source_shape[0] - t.target_shape[0] - t.offset_h;
      const int64_t after_w = t.source_shape[1] - t.target_shape[1] - t.offset_w;
      return pad_constant(x, {0, t.offset_h, t.offset_w, 0},
                          {0, after_h, after_w, 0}, 0.0);
    }
    case InputTransform::Kind::channel_average: {
      const int64_t c = t.target_shape[2];
      Tensor flat = reshape(x, {n * t.target_shape[0] * t.target_shape[1], c});
      Tensor ones = Tensor::full({c, 1}, 1.0 / static_cast<double>(c));
      return reshape(matmul(flat, ones),
                     {n, t.target_shape[0], t.target_shape[1], 1});
    }
    case InputTransform::Kind::transpose_conv:
      return transpose_conv2d(x, t.tc_weight, t.tc_bias, t.tc_stride, t.tc_pad,
                              t.tc_out_pad);
    case InputTransform::Kind::composite: {
      Tensor h = x;
      for (const InputTransform& child : t.children) h = apply(child, h);
      return h;
    }
  }
  throw Error("unknown transform kind");
}

AffineForm materialize_affine(const InputTransform& t) {
  if (has_unresolved_offset(t)) {
    throw Unresolved("materialize_affine on unsampled random_pad");
  }
  NoGradGuard ng;
  const int64_t d_tar = numel(t.target_shape);
  const int64_t d_src = numel(t.source_shape);
  Shape batched = {1, t.target_shape[0], t.target_shape[1], t.target_shape[2]};
  Tensor zero_in = Tensor::zeros(batched);
  Tensor b = apply(t, zero_in);
  AffineForm out;
  out.b = b.reshaped_view({d_src});
  out.a = Tensor::zeros({d_src, d_tar});
  for (int64_t i = 0; i < d_tar; ++i) {
    Tensor e = Tensor::zeros(batched);
    e.data()[i] = 1.0;
    Tensor col = apply(t, e);
    for (int64_t r = 0; r < d_src; ++r) {
      out.a.data()[r * d_tar + i] = col.data()[r] - out.b.data()[r];
    }
  }
  return out;
}

Tensor crop_for_discriminator(const Tensor& j, const InputTransform& t) {
  if (t.kind != InputTransform::Kind::center_crop) {
    throw WrongKind("crop_for_discriminator needs a center_crop transform");
  }
  if (j.rank() != 4 || j.dim(1) != t.target_shape[0] ||
      j.dim(2) != t.target_shape[1]) {
    throw ShapeMismatch("crop_for_discriminator input " + shape_str(j.shape()));
  }
  return slice(j, {0, t.offset_h, t.offset_w, 0},
               {j.dim(0), t.source_shape[0], t.source_shape[1], j.dim(3)});
}

InputTransform sample_random_pad_offset(const InputTransform& t, Rng& rng) {
  if (t.kind != InputTransform::Kind::random_pad) {
    throw WrongKind("sample_random_pad_offset needs a random_pad transform");
  }
  InputTransform out = t;
  out.offset_h = rng.uniform_int(
      0, static_cast<int>(t.source_shape[0] - t.target_shape[0]));
  out.offset_w = rng.uniform_int(
      0, static_cast<int>(t.source_shape[1] - t.target_shape[1]));
  return out;
}

Shape discriminator_input_shape(const InputTransform& t) {
  if (t.kind == InputTransform::Kind::center_crop) return t.source_shape;
  return t.target_shape;
}

}  // namespace igam
