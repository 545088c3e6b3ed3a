#pragma once

#include <string>
#include <vector>

#include "igam/autodiff.hpp"
#include "igam/rng.hpp"
#include "igam/tensor.hpp"

namespace igam {

// Differentiable adapter from the target task's input space into the
// teacher's. Every kind realizes x' = A x + b; b is nonzero only for the
// trainable transpose-convolution adapter.
struct InputTransform {
  enum class Kind {
    identity,
    avgpool_resize,
    bilinear_upsize,
    center_crop,
    center_pad,
    random_pad,
    channel_average,
    transpose_conv,
    composite,
  };

  Kind kind = Kind::identity;
  Shape target_shape;  // [H,W,C] seen by the student
  Shape source_shape;  // [H,W,C] expected by the teacher
  int64_t factor = 1;  // avgpool_resize / bilinear_upsize

  // pads: resolved placement of the target image inside the source canvas;
  // -1 marks a random_pad whose offset has not been sampled yet.
  int64_t offset_h = -1, offset_w = -1;

  // transpose_conv parameters
  Tensor tc_weight;  // [Cin, k, k, Cout]
  Tensor tc_bias;    // [Cout]
  int64_t tc_kernel = 3, tc_stride = 2, tc_pad = 0, tc_out_pad = 0;

  std::vector<InputTransform> children;  // composite, applied in order

  std::vector<Tensor> trainable_params() const;
  std::string describe() const;
};

InputTransform identity_transform(Shape shape);
InputTransform avgpool_resize_transform(Shape target, int64_t factor);
InputTransform bilinear_upsize_transform(Shape target, int64_t factor);
InputTransform center_crop_transform(Shape target, int64_t crop_h, int64_t crop_w);
InputTransform center_pad_transform(Shape target, int64_t out_h, int64_t out_w);
InputTransform random_pad_transform(Shape target, int64_t out_h, int64_t out_w);
InputTransform channel_average_transform(Shape target);
// Trainable 3x3 stride-2 transpose-convolution upscaler; solves the padding
// so the output matches source_hw exactly.
InputTransform transpose_conv_transform(Shape target, int64_t source_hw,
                                        int64_t out_channels, uint64_t seed);
InputTransform composite_transform(std::vector<InputTransform> children);

// x: [N, target H, W, C] -> [N, source H, W, C]; graph-connected.
Tensor apply(const InputTransform& t, const Tensor& x);

// Dense A (d_src x d_tar) and b (d_src) with apply(t, x) == A.flatten(x) + b.
struct AffineForm {
  Tensor a;
  Tensor b;
};
AffineForm materialize_affine(const InputTransform& t);

// Restricts J to the kept window of a center_crop transform so the zero
// border of a cropped teacher's gradient is not a discriminator tell.
Tensor crop_for_discriminator(const Tensor& j, const InputTransform& t);

// Fresh uniformly-drawn placement for a random_pad transform.
InputTransform sample_random_pad_offset(const InputTransform& t, Rng& rng);

bool has_unresolved_offset(const InputTransform& t);

// Shape of the J tensors fed to the discriminator ([H,W,C], target space or
// the crop window for center_crop).
Shape discriminator_input_shape(const InputTransform& t);

}  // namespace igam
