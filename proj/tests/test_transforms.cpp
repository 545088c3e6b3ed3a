#include <doctest.h>

#include <cmath>

#include "igam/rng.hpp"
#include "igam/transforms.hpp"

using namespace igam;

namespace {

// adjoint check: grad_x(v . apply(t,x)) == A^T v with A materialized from
// forward probes only
double adjoint_error(const InputTransform& t, Rng& rng) {
  const Shape in = {1, t.target_shape[0], t.target_shape[1], t.target_shape[2]};
  Tensor x = Tensor::uniform(in, -1, 1, rng);
  x.set_requires_grad(true);
  Tensor out = apply(t, x);
  Tensor v = Tensor::uniform(out.shape(), -1, 1, rng);
  Tensor g = grad(sum(mul(out, v)), {x}, false)[0];

  AffineForm form = materialize_affine(t);
  const int64_t d_src = form.a.dim(0), d_tar = form.a.dim(1);
  double worst = 0.0;
  for (int64_t i = 0; i < d_tar; ++i) {
    double want = 0.0;
    for (int64_t r = 0; r < d_src; ++r) {
      want += form.a.data()[r * d_tar + i] * v.data()[r];
    }
    worst = std::max(worst, std::fabs(want - g.data()[i]));
  }
  return worst;
}

// independent bilinear downsize-by-2 reference (align-corners-false): sample
// positions land exactly between pixel pairs, giving the 2x2 block average
Tensor bilinear_downsize2_reference(const Tensor& x) {
  const int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor out = Tensor::zeros({n, h / 2, w / 2, c});
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t y = 0; y < h / 2; ++y) {
      for (int64_t xx = 0; xx < w / 2; ++xx) {
        for (int64_t ch = 0; ch < c; ++ch) {
          auto at = [&](int64_t yy, int64_t xc) {
            return x.data()[((b * h + yy) * w + xc) * c + ch];
          };
          const double v = 0.25 * (at(2 * y, 2 * xx) + at(2 * y, 2 * xx + 1) +
                                   at(2 * y + 1, 2 * xx) +
                                   at(2 * y + 1, 2 * xx + 1));
          out.data()[((b * (h / 2) + y) * (w / 2) + xx) * c + ch] = v;
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("apply shapes and simple values") {
  Rng rng(1);

  // averaging invariance: constant image stays constant under avgpool resize
  InputTransform t = avgpool_resize_transform({8, 8, 1}, 2);
  Tensor c = Tensor::full({1, 8, 8, 1}, 0.37);
  Tensor out = apply(t, c);
  CHECK(out.shape() == Shape{1, 4, 4, 1});
  for (int64_t i = 0; i < out.size(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(0.37).epsilon(1e-15));
  }

  // channel average of (0.3, 0.6, 0.9) is 0.6
  InputTransform ca = channel_average_transform({1, 1, 3});
  Tensor px = Tensor::from({1, 1, 1, 3}, {0.3, 0.6, 0.9});
  CHECK(apply(ca, px).item() == doctest::Approx(0.6).epsilon(1e-12));

  // crop of an all-ones 4x4 to 2x2 stays all ones
  InputTransform cc = center_crop_transform({4, 4, 1}, 2, 2);
  Tensor ones = Tensor::full({1, 4, 4, 1}, 1.0);
  Tensor cropped = apply(cc, ones);
  CHECK(cropped.shape() == Shape{1, 2, 2, 1});
  for (int64_t i = 0; i < cropped.size(); ++i) CHECK(cropped.data()[i] == 1.0);
}

TEST_CASE("materialized affine forms") {
  // identity on d=4
  InputTransform id = identity_transform({2, 2, 1});
  AffineForm form = materialize_affine(id);
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t i = 0; i < 4; ++i) {
      CHECK(form.a.data()[r * 4 + i] == (r == i ? 1.0 : 0.0));
    }
    CHECK(form.b.data()[r] == 0.0);
  }

  // 1-D-style center pad 2 -> 4: identity rows with zero rows around
  InputTransform pad = center_pad_transform({1, 2, 1}, 1, 4);
  AffineForm pf = materialize_affine(pad);
  CHECK(pf.a.shape() == Shape{4, 2});
  const std::vector<double> want = {0, 0, 1, 0, 0, 1, 0, 0};
  CHECK(pf.a.values() == want);

  // 2x2 avgpool of a 2x2 image: one row of quarter weights
  InputTransform pool = avgpool_resize_transform({2, 2, 1}, 2);
  AffineForm af = materialize_affine(pool);
  CHECK(af.a.shape() == Shape{1, 4});
  for (int i = 0; i < 4; ++i) CHECK(af.a.data()[i] == doctest::Approx(0.25));

  // transpose_conv is the only kind with b != 0
  InputTransform tc = transpose_conv_transform({2, 2, 1}, 5, 1, 4);
  for (double& v : tc.tc_bias.values()) v = 0.25;
  AffineForm tf = materialize_affine(tc);
  bool has_nonzero_b = false;
  for (int64_t i = 0; i < tf.b.size(); ++i) {
    if (tf.b.data()[i] != 0.0) has_nonzero_b = true;
  }
  CHECK(has_nonzero_b);
}

TEST_CASE("adjoint correctness for every transform kind") {
  Rng rng(2);
  std::vector<InputTransform> kinds;
  kinds.push_back(identity_transform({6, 6, 1}));
  kinds.push_back(avgpool_resize_transform({6, 6, 1}, 2));
  kinds.push_back(bilinear_upsize_transform({4, 4, 1}, 2));
  kinds.push_back(center_crop_transform({6, 6, 1}, 4, 4));
  kinds.push_back(center_pad_transform({4, 4, 1}, 6, 6));
  {
    InputTransform rp = random_pad_transform({4, 4, 1}, 7, 7);
    Rng pad_rng(3);
    kinds.push_back(sample_random_pad_offset(rp, pad_rng));
  }
  kinds.push_back(channel_average_transform({4, 4, 3}));
  kinds.push_back(transpose_conv_transform({3, 3, 1}, 7, 2, 5));
  kinds.push_back(composite_transform(
      {channel_average_transform({6, 6, 3}),
       center_crop_transform({6, 6, 1}, 4, 4)}));

  for (const InputTransform& t : kinds) {
    CAPTURE(t.describe());
    CHECK(adjoint_error(t, rng) < 1e-10);
  }
}

TEST_CASE("avgpool resize equals bilinear downsize by 2 exactly on even dims") {
  Rng rng(4);
  for (auto [h, w] : std::vector<std::pair<int64_t, int64_t>>{{4, 4}, {8, 6}}) {
    Tensor x = Tensor::uniform({2, h, w, 1}, 0, 1, rng);
    InputTransform t = avgpool_resize_transform({h, w, 1}, 2);
    Tensor pooled = apply(t, x);
    Tensor reference = bilinear_downsize2_reference(x);
    CHECK(same_values(pooled, reference));
  }
}

TEST_CASE("padding then cropping with matched geometry is the identity") {
  Rng rng(5);
  Tensor x = Tensor::uniform({1, 5, 5, 1}, 0, 1, rng);
  InputTransform pad = center_pad_transform({5, 5, 1}, 9, 9);
  InputTransform crop = center_crop_transform({9, 9, 1}, 5, 5);
  Tensor round = apply(crop, apply(pad, x));
  CHECK(same_values(round, x));
}

TEST_CASE("crop_for_discriminator removes the structural zero border") {
  Rng rng(6);
  InputTransform crop = center_crop_transform({8, 8, 1}, 4, 4);
  // a gradient in target space that is zero outside the kept window, the way
  // a cropped teacher's J_t is
  Tensor j = Tensor::zeros({1, 8, 8, 1});
  for (int64_t y = 2; y < 6; ++y) {
    for (int64_t x = 2; x < 6; ++x) {
      j.data()[y * 8 + x] = rng.uniform(0.5, 1.0);
    }
  }
  Tensor inner = crop_for_discriminator(j, crop);
  CHECK(inner.shape() == Shape{1, 4, 4, 1});
  for (int64_t i = 0; i < inner.size(); ++i) CHECK(inner.data()[i] != 0.0);

  InputTransform id = identity_transform({8, 8, 1});
  CHECK_THROWS_AS(crop_for_discriminator(j, id), WrongKind);
}

TEST_CASE("random pad offsets are uniform and reproducible") {
  InputTransform rp = random_pad_transform({1, 2, 1}, 1, 4);  // offsets 0..2
  Rng rng(7);
  int counts[3] = {0, 0, 0};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    InputTransform r = sample_random_pad_offset(rp, rng);
    CHECK(r.offset_w >= 0);
    CHECK(r.offset_w <= 2);
    ++counts[r.offset_w];
  }
  // within 3 sigma of draws/3 (binomial sigma)
  const double expect = draws / 3.0;
  const double sigma = std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0));
  for (int c : counts) {
    CHECK(std::fabs(c - expect) < 3.0 * sigma);
  }

  // degenerate range: only offset 0
  InputTransform exact = random_pad_transform({4, 4, 1}, 4, 4);
  InputTransform r = sample_random_pad_offset(exact, rng);
  CHECK(r.offset_h == 0);
  CHECK(r.offset_w == 0);

  // fixed seed reproduces the sequence
  Rng ra(99), rb(99);
  for (int i = 0; i < 16; ++i) {
    InputTransform sa = sample_random_pad_offset(rp, ra);
    InputTransform sb = sample_random_pad_offset(rp, rb);
    CHECK(sa.offset_w == sb.offset_w);
    CHECK(sa.offset_h == sb.offset_h);
  }

  // applying an unresolved random pad is an error
  Tensor x = Tensor::zeros({1, 1, 2, 1});
  CHECK_THROWS_AS(apply(rp, x), Unresolved);
  CHECK_THROWS_AS(materialize_affine(rp), Unresolved);
}

TEST_CASE("bilinear upsize round trips through avgpool on constant images") {
  // exact inverse only holds for flat content; smooth content comes back
  // close but not bit-equal (interpolation spreads mass across blocks)
  InputTransform up = bilinear_upsize_transform({4, 4, 1}, 2);
  Tensor flat = Tensor::full({1, 4, 4, 1}, 0.42);
  Tensor up_img = apply(up, flat);
  InputTransform down = avgpool_resize_transform({8, 8, 1}, 2);
  Tensor round = apply(down, up_img);
  for (int64_t i = 0; i < round.size(); ++i) {
    CHECK(round.data()[i] == doctest::Approx(0.42).epsilon(1e-15));
  }

  Rng rng(8);
  Tensor smooth = Tensor::zeros({1, 4, 4, 1});
  for (int64_t i = 0; i < 16; ++i) {
    smooth.data()[i] = 0.5 + 0.3 * std::sin(0.4 * static_cast<double>(i));
  }
  Tensor round2 = apply(down, apply(up, smooth));
  CHECK(max_abs_diff(round2, smooth) < 0.15);
}

TEST_CASE("transform kind errors") {
  InputTransform rp = random_pad_transform({2, 2, 1}, 4, 4);
  InputTransform id = identity_transform({2, 2, 1});
  Rng rng(9);
  CHECK_THROWS_AS(sample_random_pad_offset(id, rng), WrongKind);
  CHECK_THROWS_AS(
      composite_transform({identity_transform({2, 2, 1}),
                           center_crop_transform({8, 8, 1}, 2, 2)}),
      IncompatibleShape);
}
