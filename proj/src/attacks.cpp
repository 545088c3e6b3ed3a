#include "igam/attacks.hpp"

#include "igam/kernels.hpp"

namespace igam {

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw ConfigError("attack epsilon must be >= 0");
  if (steps < 1) throw ConfigError("attack steps must be >= 1");
  if (!(eta > 0.0)) throw ConfigError("attack eta must be > 0");
}

namespace {

Tensor add_values(const Tensor& a, const Tensor& b) {
  Tensor out = a.detach();
  kernels::active().axpy(out.data(), 1.0, b.data(), out.size());
  return out;
}

Tensor loss_grad_at(const TargetModel& model, const Tensor& point,
                    const Tensor& y) {
  Tensor xp = point.detach();
  xp.set_requires_grad(true);
  Tensor loss = xent(model, xp, y);
  Tensor g = grad(loss, {xp}, false)[0];
  g.check_finite("attack gradient");
  return g;
}

}  // namespace

Tensor fgsm(const TargetModel& model, const Tensor& x, const Tensor& y,
            double epsilon) {
  if (epsilon < 0.0) throw ConfigError("fgsm epsilon must be >= 0");
  Tensor g = loss_grad_at(model, x, y);
  Tensor step = sign_of(g);
  Tensor x_adv = x.detach();
  kernels::active().axpy(x_adv.data(), epsilon, step.data(), x_adv.size());
  return clamp_values(x_adv, 0.0, 1.0);
}

Tensor pgd(const TargetModel& model, const Tensor& x, const Tensor& y,
           const AttackConfig& cfg, Rng* rng,
           const std::function<void(const Tensor& delta)>& on_iterate) {
  cfg.validate();
  Tensor delta;
  if (cfg.random_start) {
    if (rng == nullptr) throw ConfigError("pgd random_start needs an rng");
    delta = Tensor::uniform(x.shape(), -cfg.epsilon, cfg.epsilon, *rng);
  } else {
    delta = Tensor::zeros(x.shape());
  }
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor g = loss_grad_at(model, add_values(x, delta), y);
    Tensor dir = sign_of(g);
    kernels::active().axpy(delta.data(), cfg.eta, dir.data(), delta.size());
    delta = clamp_values(delta, -cfg.epsilon, cfg.epsilon);
    if (on_iterate) on_iterate(delta);
  }
  return clamp_values(add_values(x, delta), 0.0, 1.0);
}

std::vector<char> robust_mask(const TargetModel& model, const Tensor& x,
                              const Tensor& x_adv) {
  if (x.shape() != x_adv.shape()) throw ShapeMismatch("robust_mask inputs");
  NoGradGuard ng;
  std::vector<int> clean = argmax_rows(model.logits(x));
  std::vector<int> adv = argmax_rows(model.logits(x_adv));
  std::vector<char> out(clean.size());
  for (size_t i = 0; i < clean.size(); ++i) out[i] = clean[i] == adv[i];
  return out;
}

bool is_robust_at(const TargetModel& model, const Tensor& x,
                  const Tensor& x_adv) {
  for (char ok : robust_mask(model, x, x_adv)) {
    if (!ok) return false;
  }
  return true;
}

void adversarial_train_epoch(Model& model, const Dataset& train,
                             const AttackConfig& cfg, SgdMomentum& opt,
                             int batch_size, Rng& shuffle_rng,
                             Rng& attack_rng) {
  const std::vector<int> order = shuffled_indices(train.n(), shuffle_rng);
  const TargetModel view(model);
  for (int64_t begin = 0; begin < train.n(); begin += batch_size) {
    const int64_t count = std::min<int64_t>(batch_size, train.n() - begin);
    Batch b = take_batch(train, order, begin, count);
    Tensor x_adv =
        cfg.epsilon > 0.0 ? pgd(view, b.x, b.y, cfg, &attack_rng) : b.x;
    Tensor loss = xent(model, x_adv, b.y);
    std::vector<Tensor> grads = grad(loss, model.trainable(), false);
    opt.step(model, grads);
  }
}

}  // namespace igam
