#include <doctest.h>

#include <cmath>

#include "igam/losses.hpp"
#include "igam/rng.hpp"

using namespace igam;

namespace {

// Test-side oracle: L_adv evaluated at the closed-form optimal discriminator
// on a discrete J distribution pair.
double adv_loss_at_optimum(const std::vector<double>& pt,
                           const std::vector<double>& ps) {
  double loss = 0.0;
  for (size_t i = 0; i < pt.size(); ++i) {
    const double f = pt[i] + ps[i] > 0.0
                         ? optimal_discriminator_oracle(pt[i], ps[i])
                         : 0.5;
    if (pt[i] > 0.0) loss += pt[i] * std::log(f);
    if (ps[i] > 0.0) loss += ps[i] * std::log(1.0 - f);
  }
  return loss;
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double v = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) v += p[i] * std::log(p[i] / q[i]);
  }
  return v;
}

double js(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> m(p.size());
  for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

}  // namespace

TEST_CASE("xent closed-form values") {
  // uniform logits over 10 classes -> ln 10
  Tensor z = Tensor::zeros({1, 10});
  Tensor y = Tensor::zeros({1, 10});
  y.data()[3] = 1.0;
  CHECK(xent_logits(z, y).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // large margin -> loss below 1e-3
  Tensor z2 = Tensor::zeros({1, 4});
  z2.data()[2] = 20.0;
  Tensor y2 = Tensor::zeros({1, 4});
  y2.data()[2] = 1.0;
  CHECK(xent_logits(z2, y2).item() < 1e-3);

  // batch mean: (a + b) / 2
  Tensor zb = Tensor::from({2, 2}, {2, 0, 0, 3});
  Tensor yb = Tensor::from({2, 2}, {1, 0, 0, 1});
  const double a = std::log(1.0 + std::exp(-2.0));
  const double b = std::log(1.0 + std::exp(-3.0));
  CHECK(xent_logits(zb, yb).item() == doctest::Approx((a + b) / 2).epsilon(1e-12));
}

TEST_CASE("input gradient of a linear softmax model matches the analytic form") {
  // f(x) = softmax(W x): J = W^T (softmax(Wx) - y)
  Rng rng(5);
  Model m = build("linear", {2, 2, 1}, 3, 6);
  Tensor w = m.layers[1].weight;  // [4,3]
  Tensor x = Tensor::uniform({1, 2, 2, 1}, 0, 1, rng);
  Tensor y = Tensor::from({1, 3}, {0, 0, 1});
  Tensor j = input_gradient(m, x, y, false);

  Tensor logits = m.forward(x);
  std::vector<double> sm(3);
  double denom = 0.0;
  for (int k = 0; k < 3; ++k) denom += std::exp(logits.data()[k]);
  for (int k = 0; k < 3; ++k) sm[static_cast<size_t>(k)] = std::exp(logits.data()[k]) / denom;
  for (int d = 0; d < 4; ++d) {
    double want = 0.0;
    for (int k = 0; k < 3; ++k) {
      want += w.data()[d * 3 + k] * (sm[static_cast<size_t>(k)] - y.data()[k]);
    }
    CHECK(j.data()[d] == doctest::Approx(want).epsilon(1e-10));
  }

  // scaling the loss by c scales J by c
  Tensor xx = x.detach();
  xx.set_requires_grad(true);
  Tensor l = xent(m, xx, y);
  Tensor j1 = grad(scale(l, 3.0), {xx}, false)[0];
  for (int64_t i = 0; i < j.size(); ++i) {
    CHECK(j1.data()[i] == doctest::Approx(3.0 * j.data()[i]).epsilon(1e-12));
  }

  // determinism: identical calls, bit-identical J
  Tensor ja = input_gradient(m, x, y, false);
  Tensor jb = input_gradient(m, x, y, false);
  CHECK(same_values(ja, jb));
}

TEST_CASE("loss_adv closed-form points") {
  // scores of 0 make D = 0.5 on both sides: -log 4
  Model disc = build("disc-cnn-4", {8, 8, 1}, 1, 3);
  // zero every parameter so the score is exactly 0 for any input
  for (ParamRef p : disc.parameters()) {
    std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0);
  }
  Rng rng(6);
  Tensor jt = Tensor::uniform({4, 8, 8, 1}, -1, 1, rng);
  Tensor jscore = Tensor::uniform({4, 8, 8, 1}, -1, 1, rng);
  const double v = loss_adv(disc, jt, jscore).item();
  CHECK(v == doctest::Approx(-std::log(4.0)).epsilon(1e-12));

  // direct evaluation at D(J_t) = 0.9, D(J_s) = 0.1
  const double lv = std::log(0.9) + std::log(1.0 - 0.1);
  CHECK(lv == doctest::Approx(2 * std::log(0.9)).epsilon(1e-12));

  // a perfect discriminator pushes the loss toward 0 from below
  const double almost = std::log(1.0 - 1e-9) + std::log(1.0 - 1e-9);
  CHECK(almost < 0.0);
  CHECK(almost > -1e-6);
}

TEST_CASE("loss_diff basics") {
  Tensor a = Tensor::from({1, 2}, {3, 4});
  Tensor z = Tensor::zeros({1, 2});
  CHECK(loss_diff(a, z).item() == doctest::Approx(25.0));
  CHECK(loss_diff(a, a).item() == 0.0);
  Tensor doubled = Tensor::from({1, 2}, {6, 8});
  CHECK(loss_diff(doubled, z).item() == doctest::Approx(100.0));
  // nonnegativity on random data
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor u = Tensor::uniform({3, 5}, -2, 2, rng);
    Tensor v = Tensor::uniform({3, 5}, -2, 2, rng);
    CHECK(loss_diff(u, v).item() >= 0.0);
  }
}

TEST_CASE("optimal discriminator oracle") {
  CHECK(optimal_discriminator_oracle(1, 1) == doctest::Approx(0.5));
  CHECK(optimal_discriminator_oracle(1, 0) == doctest::Approx(1.0));
  CHECK(optimal_discriminator_oracle(0.2, 0.8) == doctest::Approx(0.2));
  CHECK_THROWS_AS(optimal_discriminator_oracle(0, 0), BothZero);
}

TEST_CASE("adversarial loss at the optimum equals 2 JS - log 4") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> pt(8), ps(8);
    double st = 0.0, ss = 0.0;
    for (int i = 0; i < 8; ++i) {
      pt[static_cast<size_t>(i)] = rng.uniform(0.0, 1.0);
      ps[static_cast<size_t>(i)] = rng.uniform(0.0, 1.0);
      st += pt[static_cast<size_t>(i)];
      ss += ps[static_cast<size_t>(i)];
    }
    for (int i = 0; i < 8; ++i) {
      pt[static_cast<size_t>(i)] /= st;
      ps[static_cast<size_t>(i)] /= ss;
    }
    const double lhs = adv_loss_at_optimum(pt, ps);
    const double rhs = 2.0 * js(pt, ps) - std::log(4.0);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }

  // exactly -log 4 iff the distributions coincide
  std::vector<double> p = {0.1, 0.2, 0.3, 0.05, 0.05, 0.1, 0.1, 0.1};
  CHECK(adv_loss_at_optimum(p, p) ==
        doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  std::vector<double> q = p;
  q[0] += 0.05;
  q[1] -= 0.05;
  CHECK(adv_loss_at_optimum(p, q) > -std::log(4.0) + 1e-5);
}

TEST_CASE("student objective composition") {
  Rng rng(9);
  Model student = build("mlp-2", {4, 4, 1}, 2, 10);
  Model disc = build("disc-cnn-4", {4, 4, 1}, 1, 11);
  Tensor x = Tensor::uniform({2, 4, 4, 1}, 0, 1, rng);
  Tensor y = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor jt = Tensor::uniform({2, 4, 4, 1}, -0.1, 0.1, rng);

  // zero weights: exactly the xent scalar
  StudentObjectiveParts off =
      student_objective(student, &disc, x, y, jt, {0.0, 0.0}, {});
  CHECK(off.total.item() == xent(student, x, y).item());
  CHECK(!off.j_student.defined());

  // diff-only objective: total = xent + lambda * L_diff
  StudentObjectiveParts don =
      student_objective(student, nullptr, x, y, jt, {0.0, 2.5}, {});
  CHECK(don.total.item() ==
        doctest::Approx(don.xent.item() + 2.5 * don.diff.item()).epsilon(1e-12));

  // both terms live
  StudentObjectiveParts both =
      student_objective(student, &disc, x, y, jt, {0.7, 2.5}, {});
  CHECK(both.total.item() ==
        doctest::Approx(both.xent.item() + 0.7 * both.adv.item() +
                        2.5 * both.diff.item())
            .epsilon(1e-12));

  // J_s == J_t and a 0.5-discriminator: objective = xent + lambda*(-log 4)
  Model flat_disc = build("disc-cnn-4", {4, 4, 1}, 1, 12);
  for (ParamRef p : flat_disc.parameters()) {
    std::fill(p.tensor.values().begin(), p.tensor.values().end(), 0.0);
  }
  Tensor j_self = input_gradient(student, x, y, false);
  StudentObjectiveParts fixed =
      student_objective(student, &flat_disc, x, y, j_self, {1.5, 0.0}, {});
  CHECK(fixed.adv.item() == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  CHECK(fixed.total.item() ==
        doctest::Approx(fixed.xent.item() - 1.5 * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("gradient of the full student objective matches finite differences") {
  Rng rng(14);
  Model student = build("mlp-2", {3, 3, 1}, 2, 15);
  Model disc = build("disc-cnn-4", {3, 3, 1}, 1, 16);
  Tensor x = Tensor::uniform({2, 3, 3, 1}, 0.1, 0.9, rng);
  Tensor y = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor jt = Tensor::uniform({2, 3, 3, 1}, -0.2, 0.2, rng);
  const LossWeights w{0.5, 3.0};

  auto objective_value = [&] {
    return student_objective(student, &disc, x, y, jt, w, {}).total.item();
  };
  StudentObjectiveParts parts = student_objective(student, &disc, x, y, jt, w, {});
  std::vector<Tensor> params = student.trainable();
  std::vector<Tensor> analytic = grad(parts.total, params, false);

  const double eps = 1e-5;
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (int64_t i = 0; i < p.size(); i += 7) {  // every 7th coordinate
      const double orig = p.data()[i];
      p.data()[i] = orig + eps;
      const double f_hi = objective_value();
      p.data()[i] = orig - eps;
      const double f_lo = objective_value();
      p.data()[i] = orig;
      const double numeric = (f_hi - f_lo) / (2.0 * eps);
      const double a = analytic[pi].data()[i];
      worst = std::max(worst,
                       std::fabs(a - numeric) / std::max(1.0, std::fabs(a)));
    }
  }
  CHECK(worst < 1e-3);
}
