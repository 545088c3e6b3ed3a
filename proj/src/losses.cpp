#include "igam/losses.hpp"

#include <cmath>

namespace igam {

Tensor xent_logits(const Tensor& logits, const Tensor& y_onehot) {
  if (logits.rank() != 2 || logits.shape() != y_onehot.shape()) {
    throw ShapeMismatch("xent: logits " + shape_str(logits.shape()) +
                        " vs labels " + shape_str(y_onehot.shape()));
  }
  const double inv_batch = -1.0 / static_cast<double>(logits.dim(0));
  Tensor lp = log_softmax(logits);
  Tensor loss = affine(sum(mul(y_onehot, lp)), inv_batch, 0.0);
  loss.check_finite("xent");
  return loss;
}

Tensor xent(const Model& model, const Tensor& x, const Tensor& y_onehot) {
  return xent_logits(model.forward(x), y_onehot);
}

Tensor xent(const TargetModel& model, const Tensor& x, const Tensor& y_onehot) {
  return xent_logits(model.logits(x), y_onehot);
}

namespace {

template <typename ModelLike>
Tensor input_gradient_impl(const ModelLike& model, const Tensor& x,
                           const Tensor& y, bool create_graph) {
  Tensor xx = x.detach();
  xx.set_requires_grad(true);
  Tensor loss = xent(model, xx, y);
  return grad(loss, {xx}, create_graph)[0];
}

}  // namespace

Tensor input_gradient(const Model& model, const Tensor& x, const Tensor& y,
                      bool create_graph) {
  return input_gradient_impl(model, x, y, create_graph);
}

Tensor input_gradient(const TargetModel& model, const Tensor& x,
                      const Tensor& y, bool create_graph) {
  return input_gradient_impl(model, x, y, create_graph);
}

Tensor loss_adv(const Model& disc, const Tensor& j_teacher,
                const Tensor& j_student) {
  if (j_teacher.shape() != j_student.shape()) {
    throw ShapeMismatch("loss_adv: J shapes differ");
  }
  Tensor score_t = disc.forward_score(j_teacher);
  Tensor score_s = disc.forward_score(j_student);
  // log D = -softplus(-s), log(1-D) = -softplus(s)
  Tensor loss = add(mean(neg(softplus(neg(score_t)))),
                    mean(neg(softplus(score_s))));
  loss.check_finite("loss_adv");
  return loss;
}

Tensor loss_diff(const Tensor& j_student, const Tensor& j_teacher) {
  if (j_student.shape() != j_teacher.shape()) {
    throw ShapeMismatch("loss_diff: J shapes differ");
  }
  const double inv_batch = 1.0 / static_cast<double>(j_student.dim(0));
  return affine(sum(square(sub(j_student, j_teacher))), inv_batch, 0.0);
}

double optimal_discriminator_oracle(double p_teacher_mass,
                                    double p_student_mass) {
  if (p_teacher_mass < 0.0 || p_student_mass < 0.0) {
    throw Error("optimal_discriminator_oracle: negative mass");
  }
  if (p_teacher_mass == 0.0 && p_student_mass == 0.0) {
    throw BothZero("optimal_discriminator_oracle");
  }
  return p_teacher_mass / (p_teacher_mass + p_student_mass);
}

Tensor standardize_per_sample(const Tensor& j) {
  if (j.rank() < 2) throw ShapeMismatch("standardize_per_sample");
  const int64_t n = j.dim(0);
  const int64_t d = j.size() / n;
  Tensor flat = reshape(j, {n, d});
  Tensor m = scale(row_sum(flat), 1.0 / static_cast<double>(d));
  Tensor centered = sub(flat, tile_cols(m, d));
  Tensor var = scale(row_sum(square(centered)), 1.0 / static_cast<double>(d));
  Tensor stddev = sqrt(affine(var, 1.0, 1e-8));
  return reshape(div(centered, tile_cols(stddev, d)), j.shape());
}

StudentObjectiveParts student_objective(const Model& student,
                                        const Model* disc, const Tensor& x,
                                        const Tensor& y,
                                        const Tensor& j_teacher,
                                        const LossWeights& weights,
                                        const StudentObjectiveOptions& opts) {
  if (weights.lambda_adv < 0.0 || weights.lambda_diff < 0.0 ||
      !std::isfinite(weights.lambda_adv) || !std::isfinite(weights.lambda_diff)) {
    throw Error("student_objective: loss weights must be finite and >= 0");
  }
  StudentObjectiveParts parts;
  const bool adv_live = weights.lambda_adv > 0.0;
  const bool diff_live = weights.lambda_diff > 0.0;

  // A zero weight disables its term: the graph is then exactly the plain
  // cross-entropy one, which keeps the zero-lambda run bit-identical to
  // standard training.
  if (!adv_live && !diff_live) {
    parts.xent = xent(student, x, y);
    parts.total = parts.xent;
    return parts;
  }

  Tensor xx = x.detach();
  xx.set_requires_grad(true);
  parts.xent = xent(student, xx, y);
  parts.total = parts.xent;
  parts.j_student = grad(parts.xent, {xx}, /*create_graph=*/true)[0];

  if (diff_live) {
    if (!j_teacher.defined()) throw Error("student_objective: missing J_t");
    parts.diff = loss_diff(parts.j_student, j_teacher);
    parts.total = add(parts.total, scale(parts.diff, weights.lambda_diff));
  }

  if (adv_live) {
    if (disc == nullptr || !j_teacher.defined()) {
      throw Error("student_objective: adversarial term needs disc and J_t");
    }
    Tensor jt = j_teacher;
    Tensor js = parts.j_student;
    if (opts.disc_crop != nullptr) {
      jt = crop_for_discriminator(jt, *opts.disc_crop);
      js = crop_for_discriminator(js, *opts.disc_crop);
    }
    if (opts.standardize_j) {
      jt = standardize_per_sample(jt);
      js = standardize_per_sample(js);
    }
    parts.score_teacher = disc->forward_score(jt);
    parts.score_student = disc->forward_score(js);
    Tensor log_d_t = neg(softplus(neg(parts.score_teacher)));
    Tensor log_1m_d_s = neg(softplus(parts.score_student));
    parts.adv = add(mean(log_d_t), mean(log_1m_d_s));
    // Saturating form follows the adversarial objective literally; the
    // non-saturating option swaps the student's term for -E[log D(J_s)].
    Tensor student_term =
        opts.non_saturating ? mean(softplus(neg(parts.score_student)))
                            : parts.adv;
    parts.total = add(parts.total, scale(student_term, weights.lambda_adv));
  }
  parts.total.check_finite("student_objective");
  return parts;
}

}  // namespace igam
