#pragma once

#include <functional>

#include "igam/classifier.hpp"
#include "igam/data.hpp"
#include "igam/losses.hpp"
#include "igam/rng.hpp"

namespace igam {

struct AttackConfig {
  double epsilon = 0.0;  // l-inf radius on the [0,1] pixel scale
  int steps = 1;
  double eta = 0.0;      // step size
  bool random_start = false;

  void validate() const;
};

// Single sign step of magnitude epsilon, clipped back to [0,1].
Tensor fgsm(const TargetModel& model, const Tensor& x, const Tensor& y,
            double epsilon);

// k-step projected sign ascent on the loss inside the l-inf ball, final
// result clipped to [0,1]. `on_iterate` observes delta after each projection
// (the containment tests hook in there). rng is required for random_start.
Tensor pgd(const TargetModel& model, const Tensor& x, const Tensor& y,
           const AttackConfig& cfg, Rng* rng = nullptr,
           const std::function<void(const Tensor& delta)>& on_iterate = {});

// argmax_i f_i(x) == argmax_i f_i(x_adv), per sample; ties break to the
// lowest index on both sides.
std::vector<char> robust_mask(const TargetModel& model, const Tensor& x,
                              const Tensor& x_adv);
// True when every sample in the batch keeps its prediction.
bool is_robust_at(const TargetModel& model, const Tensor& x,
                  const Tensor& x_adv);

// One epoch of PGD adversarial training (the AT baseline): every batch is
// replaced by its PGD counterpart before the SGD step.
void adversarial_train_epoch(Model& model, const Dataset& train,
                             const AttackConfig& cfg, SgdMomentum& opt,
                             int batch_size, Rng& shuffle_rng,
                             Rng& attack_rng);

}  // namespace igam
