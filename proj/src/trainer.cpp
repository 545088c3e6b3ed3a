#include "igam/trainer.hpp"

#include <cmath>
#include <sstream>

#include "igam/io.hpp"
#include "igam/metrics.hpp"

namespace igam {

void RunLog::append(const RunLogRow& row) {
  for (double v : {row.l_xent, row.l_adv, row.l_diff, row.disc_acc, row.cos_sim}) {
    if (!std::isfinite(v)) throw NonFiniteValue("run log scalar");
  }
  if (!rows.empty() && row.step <= rows.back().step) {
    throw Error("run log steps must be monotone");
  }
  rows.push_back(row);
}

std::string RunLog::to_csv() const {
  std::ostringstream os;
  os << "step,l_xent,l_adv,l_diff,disc_acc,cos_sim\n";
  for (const RunLogRow& r : rows) {
    os << r.step << "," << fmt_double(r.l_xent) << "," << fmt_double(r.l_adv)
       << "," << fmt_double(r.l_diff) << "," << fmt_double(r.disc_acc) << ","
       << fmt_double(r.cos_sim) << "\n";
  }
  return os.str();
}

void standard_train_epoch(Model& model, const Dataset& train, SgdMomentum& opt,
                          int batch_size, Rng& shuffle_rng, RunLog* log,
                          int64_t* step) {
  const std::vector<int> order = shuffled_indices(train.n(), shuffle_rng);
  for (int64_t begin = 0; begin < train.n(); begin += batch_size) {
    const int64_t count = std::min<int64_t>(batch_size, train.n() - begin);
    Batch b = take_batch(train, order, begin, count);
    Tensor loss = xent(model, b.x, b.y);
    std::vector<Tensor> grads = grad(loss, model.trainable(), false);
    opt.step(model, grads);
    if (step != nullptr) ++*step;
    if (log != nullptr) {
      log->append({step != nullptr ? *step : int64_t(log->rows.size() + 1),
                   loss.item(), 0.0, 0.0, 0.0, 0.0});
    }
  }
}

namespace {

// Resamples every random_pad placement in the transform tree.
InputTransform resolve_random(const InputTransform& t, Rng& rng) {
  if (t.kind == InputTransform::Kind::random_pad) {
    return sample_random_pad_offset(t, rng);
  }
  if (t.kind == InputTransform::Kind::composite) {
    InputTransform out = t;
    for (InputTransform& child : out.children) {
      child = resolve_random(child, rng);
    }
    return out;
  }
  return t;
}

bool needs_resolution(const InputTransform& t) {
  if (t.kind == InputTransform::Kind::random_pad) return true;
  for (const InputTransform& child : t.children) {
    if (needs_resolution(child)) return true;
  }
  return false;
}

double disc_accuracy(const Tensor& score_teacher, const Tensor& score_student) {
  int correct = 0;
  for (int64_t i = 0; i < score_teacher.size(); ++i) {
    if (score_teacher.data()[i] > 0.0) ++correct;
  }
  for (int64_t i = 0; i < score_student.size(); ++i) {
    if (score_student.data()[i] <= 0.0) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(score_teacher.size() + score_student.size());
}

}  // namespace

void finetune_teacher(Model& teacher, InputTransform& transform,
                      const Dataset& train, const TrainConfig& cfg,
                      RunLog* log) {
  const uint64_t backbone_before = teacher.frozen_param_hash();
  std::vector<Tensor> params = teacher.trainable();
  for (const Tensor& t : transform.trainable_params()) params.push_back(t);
  SgdMomentum opt{cfg.lr_teacher, cfg.momentum, {}};
  Rng shuffle_rng = Rng(cfg.seed).stream("data/shuffle/finetune");
  Rng pad_rng = Rng(cfg.seed).stream("pad/finetune");
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    const std::vector<int> order = shuffled_indices(train.n(), shuffle_rng);
    for (int64_t begin = 0; begin < train.n(); begin += cfg.batch_size) {
      const int64_t count = std::min<int64_t>(cfg.batch_size, train.n() - begin);
      Batch b = take_batch(train, order, begin, count);
      const InputTransform tf_batch = needs_resolution(transform)
                                          ? resolve_random(transform, pad_rng)
                                          : transform;
      Tensor loss = xent(TargetModel(teacher, tf_batch), b.x, b.y);
      std::vector<Tensor> grads = grad(loss, params, false);
      opt.step(params, grads);
      ++step;
      if (log != nullptr) log->append({step, loss.item(), 0.0, 0.0, 0.0, 0.0});
    }
  }
  if (teacher.frozen_param_hash() != backbone_before) {
    throw Error("frozen teacher backbone changed during finetuning");
  }
}

IgamState IgamState::init(const TrainConfig& cfg) {
  IgamState s;
  s.opt_student = SgdMomentum{cfg.lr_student, cfg.momentum, {}};
  s.opt_disc = SgdMomentum{cfg.lr_disc, cfg.momentum, {}};
  s.shuffle_rng = Rng(cfg.seed).stream("data/shuffle");
  s.pad_rng = Rng(cfg.seed).stream("pad/igam");
  return s;
}

void igam_epoch(Model& student, const Model& teacher, Model& disc,
                const InputTransform& transform, const Dataset& train,
                const TrainConfig& cfg, IgamState& state, RunLog& log) {
  const uint64_t teacher_before = teacher.param_hash();
  const bool adv_live = cfg.weights.lambda_adv > 0.0;
  const bool diff_live = cfg.weights.lambda_diff > 0.0;
  const bool need_teacher_grad = adv_live || diff_live;

  StudentObjectiveOptions opts;
  opts.non_saturating = cfg.non_saturating;
  opts.standardize_j = cfg.standardize_j;
  if (transform.kind == InputTransform::Kind::center_crop) {
    opts.disc_crop = &transform;
  }

  const std::vector<int> order = shuffled_indices(train.n(), state.shuffle_rng);
  for (int64_t begin = 0; begin < train.n(); begin += cfg.batch_size) {
    const int64_t count = std::min<int64_t>(cfg.batch_size, train.n() - begin);
    Batch b = take_batch(train, order, begin, count);

    RunLogRow row;
    try {
      Tensor j_teacher;
      if (need_teacher_grad) {
        // J_t is recomputed per batch and never cached; random pads change
        // the affine map every batch.
        const InputTransform tf_batch =
            needs_resolution(transform) ? resolve_random(transform, state.pad_rng)
                                        : transform;
        j_teacher = input_gradient(TargetModel(teacher, tf_batch), b.x, b.y,
                                   /*create_graph=*/false);
      }
      StudentObjectiveParts parts = student_objective(
          student, adv_live ? &disc : nullptr, b.x, b.y, j_teacher,
          cfg.weights, opts);

      row.l_xent = parts.xent.item();
      row.l_adv = parts.adv.defined() ? parts.adv.item() : 0.0;
      row.l_diff = parts.diff.defined() ? parts.diff.item() : 0.0;
      if (std::fabs(row.l_adv) > cfg.divergence_guard) {
        log.notes.push_back("step " + std::to_string(state.step + 1) +
                            ": |L_adv| > guard, step skipped");
        continue;
      }

      std::vector<Tensor> grads_s = grad(parts.total, student.trainable(), false);
      state.opt_student.step(student, grads_s);
      ++state.step;

      if (adv_live && state.step % cfg.disc_update_period == 0) {
        // Ascent on the very scalar the student just descended, evaluated at
        // the pre-update batch state (Algorithm-1 ordering).
        std::vector<Tensor> grads_d = grad(parts.adv, disc.trainable(), false);
        state.opt_disc.ascend(disc, grads_d);
      }

      if (parts.score_teacher.defined()) {
        row.disc_acc = disc_accuracy(parts.score_teacher, parts.score_student);
      }
      if (parts.j_student.defined() && j_teacher.defined()) {
        row.cos_sim = mean_sample_cosine(parts.j_student, j_teacher);
      }
    } catch (const NonFiniteValue& e) {
      log.notes.push_back("step " + std::to_string(state.step + 1) +
                          ": non-finite value, step skipped (" + e.what() + ")");
      continue;
    }
    row.step = state.step;
    log.append(row);
  }

  if (teacher.param_hash() != teacher_before) {
    throw Error("teacher parameters changed during igam epoch");
  }
}

MatchStats gradient_match_stats(const Model& student, const Model& teacher,
                                const InputTransform& transform,
                                const Dataset& holdout, int max_samples) {
  const int64_t n = std::min<int64_t>(max_samples, holdout.n());
  Dataset part = subset(holdout, 0, n);
  Tensor y = one_hot(part.labels, holdout.num_classes);
  InputTransform tf = transform;
  if (needs_resolution(tf)) {
    Rng rng = Rng(0).stream("stats/pad");
    tf = resolve_random(tf, rng);
  }
  Tensor j_t = input_gradient(TargetModel(teacher, tf), part.images, y, false);
  Tensor j_s = input_gradient(student, part.images, y, false);
  MatchStats stats;
  stats.cos_sim = mean_sample_cosine(j_s, j_t);
  stats.l_diff = loss_diff(j_s, j_t).item();
  return stats;
}

IgamRunResult run_igam_phase(const Model& teacher,
                             const InputTransform& transform,
                             const Dataset& train, const Dataset& holdout,
                             const std::string& student_arch,
                             const std::string& disc_arch,
                             const TrainConfig& cfg) {
  Rng root(cfg.seed);
  IgamRunResult result{
      build(student_arch, transform.target_shape, train.num_classes,
            root.stream("init/student").next_u64()),
      build(disc_arch, discriminator_input_shape(transform), 1,
            root.stream("init/disc").next_u64()),
      RunLog{},
      0.0, 0.0, 0.0, 0.0};
  result.student.name = "igam-student";
  result.disc.name = "disc";

  MatchStats before = gradient_match_stats(result.student, teacher, transform,
                                           holdout, 128);
  result.cos_sim_initial = before.cos_sim;
  result.l_diff_initial = before.l_diff;

  IgamState state = IgamState::init(cfg);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    igam_epoch(result.student, teacher, result.disc, transform, train, cfg,
               state, result.log);
  }

  MatchStats after = gradient_match_stats(result.student, teacher, transform,
                                          holdout, 128);
  result.cos_sim_final = after.cos_sim;
  result.l_diff_final = after.l_diff;
  return result;
}

}  // namespace igam
