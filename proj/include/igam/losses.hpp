#pragma once

#include "igam/classifier.hpp"

namespace igam {

struct LossWeights {
  double lambda_adv = 0.0;
  double lambda_diff = 0.0;
};

// Mean over the batch of -y^T log_softmax(logits); y rows are one-hot.
Tensor xent_logits(const Tensor& logits, const Tensor& y_onehot);
Tensor xent(const Model& model, const Tensor& x, const Tensor& y_onehot);
Tensor xent(const TargetModel& model, const Tensor& x, const Tensor& y_onehot);

// J = d xent / d x, with x's shape. With create_graph the result stays
// differentiable (the student's J participates in the parameter gradient);
// without it the result is a constant (the teacher's target J).
Tensor input_gradient(const Model& model, const Tensor& x, const Tensor& y,
                      bool create_graph);
Tensor input_gradient(const TargetModel& model, const Tensor& x,
                      const Tensor& y, bool create_graph);

// Mean log D(J_t) + mean log(1 - D(J_s)), evaluated through the
// discriminator's pre-sigmoid scores in log-sigmoid form so neither log can
// underflow.
Tensor loss_adv(const Model& disc, const Tensor& j_teacher,
                const Tensor& j_student);

// Mean over the batch of ||J_s - J_t||_2^2.
Tensor loss_diff(const Tensor& j_student, const Tensor& j_teacher);

// f*(J) = p_t(J) / (p_t(J) + p_s(J))
double optimal_discriminator_oracle(double p_teacher_mass,
                                    double p_student_mass);

struct StudentObjectiveOptions {
  bool non_saturating = false;
  bool standardize_j = false;
  // When the teacher input is a center crop, both J's are cropped to the
  // kept window before the discriminator sees them.
  const InputTransform* disc_crop = nullptr;
};

struct StudentObjectiveParts {
  Tensor total;       // L_xent + lambda_adv*L_adv + lambda_diff*L_diff
  Tensor xent;        // always defined
  Tensor adv;         // defined iff lambda_adv > 0
  Tensor diff;        // defined iff lambda_diff > 0
  Tensor j_student;   // defined iff either regularizer is live
  Tensor score_teacher, score_student;  // disc pre-sigmoid scores, if live
};

// One graph: the xent forward also feeds J_s via double backpropagation.
// A zero lambda disables its term entirely (total stays bit-identical to the
// plain cross-entropy path).
StudentObjectiveParts student_objective(const Model& student,
                                        const Model* disc, const Tensor& x,
                                        const Tensor& y,
                                        const Tensor& j_teacher,
                                        const LossWeights& weights,
                                        const StudentObjectiveOptions& opts);

// Per-sample standardization of a J image batch, (J - mean) / std.
Tensor standardize_per_sample(const Tensor& j);

}  // namespace igam
