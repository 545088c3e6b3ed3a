#include <doctest.h>

#include <cmath>

#include "igam/autodiff.hpp"
#include "igam/nn.hpp"
#include "igam/losses.hpp"
#include "igam/rng.hpp"

using namespace igam;

TEST_CASE("forward op values") {
  // avg_pool2d([[1,2],[3,4]], kernel 2, stride 2) -> [[2.5]]
  Tensor img = Tensor::from({1, 2, 2, 1}, {1, 2, 3, 4});
  CHECK(avg_pool2d(img, 2, 2).item() == 2.5);

  Tensor r = relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(r.values() == std::vector<double>{0, 0, 2});

  // matmul(I3, v) == v
  Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor v = Tensor::from({3, 1}, {0.3, -1.7, 2.9});
  Tensor mv = matmul(eye, v);
  CHECK(same_values(mv, v));
}

TEST_CASE("grad basics and errors") {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  CHECK(grad(y, {x}, false)[0].item() == doctest::Approx(6.0));

  // not a scalar
  Tensor vec = Tensor::from({2}, {1, 2});
  vec.set_requires_grad(true);
  CHECK_THROWS_AS((void)grad(square(vec), {vec}, false), NotScalar);

  // wrt does not require grad
  Tensor plain = Tensor::scalar(1.0);
  CHECK_THROWS_AS((void)grad(y, {plain}, false), GradDisabled);

  // wrt not reachable
  Tensor other = Tensor::scalar(1.0);
  other.set_requires_grad(true);
  CHECK_THROWS_AS((void)grad(y, {other}, false), Unreachable);
}

TEST_CASE("closed-form nested gradient") {
  // L = theta * x^2 at theta=1, x=2; S = (dL/dx)^2 = (2 theta x)^2;
  // dS/dtheta = 8 theta x^2 = 32
  Tensor theta = Tensor::scalar(1.0);
  theta.set_requires_grad(true);
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad(true);
  Tensor loss = mul(theta, mul(x, x));
  Tensor j = grad(loss, {x}, true)[0];
  Tensor s = mul(j, j);
  CHECK(grad(s, {theta}, false)[0].item() == doctest::Approx(32.0).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy gradient at symmetric logits") {
  // logits [0,0], one-hot [1,0] -> grad [-0.5, 0.5]
  Tensor z = Tensor::from({1, 2}, {0, 0});
  z.set_requires_grad(true);
  Tensor y = Tensor::from({1, 2}, {1, 0});
  Tensor loss = xent_logits(z, y);
  Tensor g = grad(loss, {z}, false)[0];
  CHECK(g.data()[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(g.data()[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("finite differences: sum of squares") {
  Tensor p = Tensor::from({3}, {1, 2, 3});
  const double err = finite_difference_check(
      [](const Tensor& t) { return sum(square(t)); }, p, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("finite differences: mlp cross-entropy wrt input") {
  Rng rng(11);
  Model m = build("mlp-2", {4, 4, 1}, 3, 5);
  Tensor x = Tensor::uniform({1, 4, 4, 1}, 0.05, 0.95, rng);
  Tensor y = Tensor::from({1, 3}, {0, 1, 0});
  const double err = finite_difference_check(
      [&](const Tensor& t) { return xent(m, t, y); }, x, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("finite differences: nested |grad_x xent|^2") {
  Rng rng(13);
  Model m = build("mlp-2", {3, 3, 1}, 2, 9);
  Tensor x = Tensor::uniform({1, 3, 3, 1}, 0.05, 0.95, rng);
  Tensor y = Tensor::from({1, 2}, {1, 0});
  const double err = finite_difference_check(
      [&](const Tensor& t) {
        Tensor loss = xent(m, t, y);
        Tensor j = grad(loss, {t}, true)[0];
        return l2_norm_sq(j);
      },
      x, 1e-5);
  CHECK(err < 1e-3);
}

TEST_CASE("linearity of grad") {
  Rng rng(17);
  Tensor x = Tensor::uniform({6}, -1, 1, rng);
  x.set_requires_grad(true);
  const double a = 1.3, b = -0.7;
  Tensor f = sum(square(x));
  Tensor g = sum(mul(x, exp(x)));
  Tensor combo = add(scale(f, a), scale(g, b));
  Tensor gc = grad(combo, {x}, false)[0];
  Tensor gf = grad(f, {x}, false)[0];
  Tensor gg = grad(g, {x}, false)[0];
  for (int64_t i = 0; i < x.size(); ++i) {
    CHECK(gc.data()[i] ==
          doctest::Approx(a * gf.data()[i] + b * gg.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("determinism: same seed, bit-identical forward and grads") {
  auto run = [] {
    Rng rng(23);
    Model m = build("small-cnn", {8, 8, 1}, 2, 77);
    Tensor x = Tensor::uniform({2, 8, 8, 1}, 0, 1, rng);
    Tensor y = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor loss = xent(m, x, y);
    auto grads = grad(loss, m.trainable(), false);
    return std::pair<double, Tensor>(loss.item(), grads[0]);
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK(same_values(g1, g2));
}

TEST_CASE("double backprop through smooth primitives vs finite differences") {
  // directional second derivative of f(x) = sum(sigmoid(W x)) via
  // grad(grad(f,x).v, x), checked against central differences of the
  // directional derivative
  Rng rng(31);
  Tensor w = Tensor::uniform({5, 5}, -1, 1, rng);
  Tensor vdir = Tensor::uniform({5, 1}, -1, 1, rng);
  Tensor x0 = Tensor::uniform({5, 1}, -1, 1, rng);

  auto directional = [&](const Tensor& t) {
    Tensor f = sum(sigmoid(matmul(w, t)));
    Tensor g = grad(f, {t}, true)[0];
    return sum(mul(g, vdir));
  };
  const double err = finite_difference_check(directional, x0, 1e-5);
  CHECK(err < 1e-3);
}

TEST_CASE("relu second derivative is zero by convention") {
  Tensor x = Tensor::from({3}, {-1.0, 0.5, 2.0});
  x.set_requires_grad(true);
  Tensor f = sum(square(relu(x)));
  Tensor g = grad(f, {x}, true)[0];  // 2*relu(x)*mask
  Tensor s = sum(mul(g, g));
  Tensor gg = grad(s, {x}, false)[0];
  // d/dx (2 x mask)^2 = 8 x mask (mask constant)
  CHECK(gg.data()[0] == 0.0);
  CHECK(gg.data()[1] == doctest::Approx(8 * 0.5));
  CHECK(gg.data()[2] == doctest::Approx(8 * 2.0));
}

TEST_CASE("conv and pool adjoint pairs agree with finite differences") {
  Rng rng(41);
  Tensor w = Tensor::uniform({3, 3, 1, 2}, -0.5, 0.5, rng);
  w.set_requires_grad(true);
  Tensor b = Tensor::zeros({2});
  b.set_requires_grad(true);
  Tensor x = Tensor::uniform({1, 6, 6, 1}, 0, 1, rng);

  const double err_x = finite_difference_check(
      [&](const Tensor& t) {
        return sum(square(avg_pool2d(conv2d(t, w, b, 1, 1), 2, 2)));
      },
      x, 1e-5);
  CHECK(err_x < 1e-6);

  const double err_w = finite_difference_check(
      [&](const Tensor& t) {
        return sum(square(conv2d(x, t, b, 2, 1)));
      },
      w, 1e-5);
  CHECK(err_w < 1e-6);
}

TEST_CASE("transpose conv matches finite differences and shapes") {
  Rng rng(43);
  Tensor w = Tensor::uniform({1, 3, 3, 2}, -0.5, 0.5, rng);
  Tensor b = Tensor::from({2}, {0.1, -0.2});
  Tensor x = Tensor::uniform({1, 4, 4, 1}, 0, 1, rng);
  Tensor out = transpose_conv2d(x, w, b, 2, 1, 1);
  CHECK(out.shape() == Shape{1, 8, 8, 2});

  const double err = finite_difference_check(
      [&](const Tensor& t) {
        return sum(square(transpose_conv2d(t, w, b, 2, 1, 1)));
      },
      x, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("transpose conv places the stencil of a delta input") {
  // one input pixel at (0,0), identity-ish filter: output picks up the
  // filter stencil at stride offsets
  Tensor x = Tensor::zeros({1, 2, 2, 1});
  x.data()[0] = 1.0;
  Tensor w = Tensor::zeros({1, 3, 3, 1});
  for (int i = 0; i < 9; ++i) w.data()[i] = static_cast<double>(i + 1);
  Tensor out = transpose_conv2d(x, w, Tensor(), 2, 0, 0);  // 2->5
  CHECK(out.shape() == Shape{1, 5, 5, 1});
  // direct adjoint arithmetic: out[y][x] = w[y][x] for the delta at (0,0)
  for (int y = 0; y < 3; ++y) {
    for (int xx = 0; xx < 3; ++xx) {
      CHECK(out.data()[y * 5 + xx] == doctest::Approx(w.data()[y * 3 + xx]));
    }
  }
  CHECK(out.data()[3 * 5 + 3] == 0.0);
}

TEST_CASE("log_softmax rows exponentiate to 1") {
  Rng rng(47);
  Tensor z = Tensor::uniform({5, 7}, -30, 30, rng);
  Tensor lp = log_softmax(z);
  for (int64_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < 7; ++j) s += std::exp(lp.data()[i * 7 + j]);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("slice pad concat reshape round trips") {
  Rng rng(53);
  Tensor x = Tensor::uniform({2, 3, 4, 1}, -1, 1, rng);
  Tensor padded = pad_constant(x, {0, 1, 2, 0}, {0, 1, 2, 0}, 0.0);
  CHECK(padded.shape() == Shape{2, 5, 8, 1});
  Tensor back = slice(padded, {0, 1, 2, 0}, {2, 3, 4, 1});
  CHECK(same_values(back, x));

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor bten = Tensor::from({1, 2}, {3, 4});
  Tensor cat = concat({a, bten}, 0);
  CHECK(cat.shape() == Shape{2, 2});
  CHECK(cat.values() == std::vector<double>{1, 2, 3, 4});

  // grad flows through concat into both parts
  Tensor pa = Tensor::from({1, 2}, {1.0, 2.0});
  pa.set_requires_grad(true);
  Tensor pb = Tensor::from({1, 2}, {3.0, 4.0});
  pb.set_requires_grad(true);
  Tensor loss = sum(square(concat({pa, pb}, 0)));
  auto gs = grad(loss, {pa, pb}, false);
  CHECK(gs[0].values() == std::vector<double>{2, 4});
  CHECK(gs[1].values() == std::vector<double>{6, 8});
}
