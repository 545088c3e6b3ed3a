#pragma once

#include <string>
#include <vector>

#include "igam/attacks.hpp"
#include "igam/classifier.hpp"
#include "igam/data.hpp"
#include "igam/losses.hpp"

namespace igam {

struct TrainConfig {
  double lr_teacher = 0.05;   // alpha
  double lr_student = 0.05;   // beta
  double lr_disc = 0.02;      // gamma
  double momentum = 0.9;
  LossWeights weights;        // lambda_adv, lambda_diff
  int disc_update_period = 5;
  int finetune_epochs = 5;
  int epochs = 30;            // student epochs (standard / AT / IGAM phase)
  int batch_size = 64;
  uint64_t seed = 7;
  bool non_saturating = false;
  bool standardize_j = false;
  AttackConfig train_attack;  // adversarial-training baseline attack
  double divergence_guard = 50.0;
};

struct RunLogRow {
  int64_t step = 0;
  double l_xent = 0.0;
  double l_adv = 0.0;
  double l_diff = 0.0;
  double disc_acc = 0.0;
  double cos_sim = 0.0;
};

struct RunLog {
  std::vector<RunLogRow> rows;
  std::vector<std::string> notes;  // skipped-step diagnostics

  void append(const RunLogRow& row);
  std::string to_csv() const;  // header: step,l_xent,l_adv,l_diff,disc_acc,cos_sim
};

// One epoch of plain SGD training on natural images.
void standard_train_epoch(Model& model, const Dataset& train, SgdMomentum& opt,
                          int batch_size, Rng& shuffle_rng, RunLog* log,
                          int64_t* step);

// Phase 1: the teacher's fresh logit head (and a trainable transpose-conv
// adapter, when the transform carries one) is trained on the target task
// through the input transform. Everything frozen stays bit-identical.
void finetune_teacher(Model& teacher, InputTransform& transform,
                      const Dataset& train, const TrainConfig& cfg,
                      RunLog* log);

struct IgamState {
  SgdMomentum opt_student;
  SgdMomentum opt_disc;
  Rng shuffle_rng{0};
  Rng pad_rng{0};
  int64_t step = 0;

  static IgamState init(const TrainConfig& cfg);
};

// Phase 2, one epoch of Algorithm-1 alternation: per batch the student
// descends L_xent + lambda_adv*L_adv + lambda_diff*L_diff (J_s live via
// double backprop, J_t a fresh constant), and every disc_update_period
// student steps the discriminator ascends the same L_adv scalar.
void igam_epoch(Model& student, const Model& teacher, Model& disc,
                const InputTransform& transform, const Dataset& train,
                const TrainConfig& cfg, IgamState& state, RunLog& log);

struct IgamRunResult {
  Model student;
  Model disc;
  RunLog log;
  double cos_sim_initial = 0.0;  // held-out cos(J_s, J_t) before training
  double cos_sim_final = 0.0;
  double l_diff_initial = 0.0;   // held-out L_diff before/after
  double l_diff_final = 0.0;
};

// Full IGAM phase against an already-finetuned teacher. `holdout` feeds the
// before/after gradient-matching metrics.
IgamRunResult run_igam_phase(const Model& teacher,
                             const InputTransform& transform,
                             const Dataset& train, const Dataset& holdout,
                             const std::string& student_arch,
                             const std::string& disc_arch,
                             const TrainConfig& cfg);

// Gradient-matching diagnostics on a held-out batch.
struct MatchStats {
  double cos_sim = 0.0;
  double l_diff = 0.0;
};
MatchStats gradient_match_stats(const Model& student, const Model& teacher,
                                const InputTransform& transform,
                                const Dataset& holdout, int max_samples);

}  // namespace igam
