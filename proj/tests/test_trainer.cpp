#include <doctest.h>

#include <cmath>

#include "igam/checkpoint.hpp"
#include "igam/metrics.hpp"
#include "igam/trainer.hpp"

using namespace igam;

namespace {

Dataset moons(int n, const std::string& split, int side = 12, uint64_t seed = 3) {
  SynthSpec spec{"raster-moons", n, side, side, 1, 2, 0.05, split};
  return synth_dataset(spec, seed);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.lr_student = 0.05;
  cfg.lr_teacher = 0.05;
  cfg.lr_disc = 0.02;
  cfg.momentum = 0.9;
  cfg.batch_size = 16;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("runlog csv format and monotone steps") {
  RunLog log;
  log.append({1, 0.5, -1.0, 2.0, 0.75, 0.1});
  CHECK_THROWS_AS(log.append({1, 0, 0, 0, 0, 0}), Error);
  CHECK_THROWS_AS(log.append({2, std::nan(""), 0, 0, 0, 0}), NonFiniteValue);
  const std::string csv = log.to_csv();
  CHECK(csv.rfind("step,l_xent,l_adv,l_diff,disc_acc,cos_sim\n", 0) == 0);
  CHECK(csv.find("\n1,0.5,-1,2,0.75,0.1") != std::string::npos);
}

TEST_CASE("finetune touches only the head and adapter") {
  Dataset train = moons(64, "train");
  Model raw = build("small-cnn", {12, 12, 1}, 2, 21);
  Model teacher = freeze_all_but_logits(raw, 2, 22);
  InputTransform tf = identity_transform({12, 12, 1});
  TrainConfig cfg = small_config();
  cfg.finetune_epochs = 2;

  const uint64_t backbone = teacher.frozen_param_hash();
  const uint64_t head_before = teacher.param_hash();
  RunLog log;
  finetune_teacher(teacher, tf, train, cfg, &log);
  CHECK(teacher.frozen_param_hash() == backbone);
  CHECK(teacher.param_hash() != head_before);
  CHECK(!log.rows.empty());

  // zero finetune epochs: nothing moves
  Model teacher2 = freeze_all_but_logits(raw, 2, 22);
  const uint64_t before2 = teacher2.param_hash();
  cfg.finetune_epochs = 0;
  finetune_teacher(teacher2, tf, train, cfg, nullptr);
  CHECK(teacher2.param_hash() == before2);
}

TEST_CASE("finetuning on the source task with identity transform keeps accuracy") {
  Dataset train = moons(256, "train");
  Dataset test = moons(128, "test");

  // a trained source model stands in for the robust checkpoint
  Model source = build("small-cnn", {12, 12, 1}, 2, 31);
  SgdMomentum opt{0.08, 0.9, {}};
  Rng shuffle = Rng(1).stream("data/shuffle");
  int64_t step = 0;
  for (int epoch = 0; epoch < 25; ++epoch) {
    standard_train_epoch(source, train, opt, 32, shuffle, nullptr, &step);
  }
  const double source_acc = clean_accuracy(TargetModel(source), test);

  Model teacher = freeze_all_but_logits(source, 2, 32);
  InputTransform tf = identity_transform({12, 12, 1});
  TrainConfig cfg = small_config();
  cfg.finetune_epochs = 15;
  finetune_teacher(teacher, tf, train, cfg, nullptr);
  const double ft_acc = clean_accuracy(TargetModel(teacher, tf), test);
  MESSAGE("source=", source_acc, " finetuned=", ft_acc);
  CHECK(ft_acc >= source_acc - 2.0);
}

TEST_CASE("igam with zero weights is bit-identical to standard training") {
  Dataset train = moons(96, "train");
  TrainConfig cfg = small_config();
  cfg.weights = {0.0, 0.0};
  cfg.epochs = 3;

  // standard arm
  Model std_model = build("small-cnn", {12, 12, 1}, 2,
                          Rng(cfg.seed).stream("init/student").next_u64());
  SgdMomentum opt{cfg.lr_student, cfg.momentum, {}};
  Rng shuffle = Rng(cfg.seed).stream("data/shuffle");
  RunLog std_log;
  int64_t step = 0;
  std::vector<uint64_t> std_hashes;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    standard_train_epoch(std_model, train, opt, cfg.batch_size, shuffle,
                         &std_log, &step);
    std_hashes.push_back(std_model.param_hash());
  }

  // igam arm with disabled regularizers; teacher and disc exist but must not
  // influence the trajectory
  Model teacher = build("small-cnn", {12, 12, 1}, 2, 777);
  Model student = build("small-cnn", {12, 12, 1}, 2,
                        Rng(cfg.seed).stream("init/student").next_u64());
  Model disc = build("disc-cnn-4", {12, 12, 1}, 1, 778);
  InputTransform tf = identity_transform({12, 12, 1});
  IgamState state = IgamState::init(cfg);
  RunLog igam_log;
  std::vector<uint64_t> igam_hashes;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    igam_epoch(student, teacher, disc, tf, train, cfg, state, igam_log);
    igam_hashes.push_back(student.param_hash());
  }

  CHECK(std_hashes == igam_hashes);
  REQUIRE(std_log.rows.size() == igam_log.rows.size());
  for (size_t i = 0; i < std_log.rows.size(); ++i) {
    CHECK(std_log.rows[i].l_xent == igam_log.rows[i].l_xent);
  }
}

TEST_CASE("teacher stays frozen through igam epochs") {
  Dataset train = moons(96, "train");  // 6 steps: crosses the disc period
  Model teacher = build("small-cnn", {12, 12, 1}, 2, 41);
  Model student = build("small-cnn", {12, 12, 1}, 2, 42);
  Model disc = build("disc-cnn-4", {12, 12, 1}, 1, 43);
  InputTransform tf = identity_transform({12, 12, 1});
  TrainConfig cfg = small_config();
  cfg.weights = {1.0, 10.0};
  IgamState state = IgamState::init(cfg);
  RunLog log;
  const uint64_t teacher_hash = teacher.param_hash();
  const uint64_t disc_hash = disc.param_hash();
  igam_epoch(student, teacher, disc, tf, train, cfg, state, log);
  CHECK(teacher.param_hash() == teacher_hash);
  CHECK(disc.param_hash() != disc_hash);  // discriminator does get updates
  CHECK(!log.rows.empty());
  for (const RunLogRow& row : log.rows) {
    CHECK(std::isfinite(row.l_adv));
    CHECK(row.l_diff >= 0.0);
  }
}

TEST_CASE("identical student and teacher keep L_diff near zero") {
  Dataset train = moons(64, "train");
  Model teacher = build("small-cnn", {12, 12, 1}, 2, 51);
  Model student = clone_model(teacher);
  Model disc = build("disc-cnn-4", {12, 12, 1}, 1, 52);
  InputTransform tf = identity_transform({12, 12, 1});
  TrainConfig cfg = small_config();
  cfg.weights = {0.0, 100.0};
  cfg.lr_student = 0.01;
  IgamState state = IgamState::init(cfg);
  RunLog log;
  igam_epoch(student, teacher, disc, tf, train, cfg, state, log);
  // J_s == J_t bit-exactly on the first batch (identical parameters), and
  // the quadratic penalty keeps the mismatch tiny across the epoch
  CHECK(log.rows.front().cos_sim == 1.0);
  CHECK(log.rows.front().l_diff == 0.0);
  for (const RunLogRow& row : log.rows) {
    CHECK(row.l_diff < 1e-2);
  }
}

TEST_CASE("discriminator ascends the same scalar the student descends") {
  // with a fixed student, repeated ascent steps push L_adv up
  Dataset train = moons(32, "train");
  Model teacher = build("small-cnn", {12, 12, 1}, 2, 61);
  Model student = build("small-cnn", {12, 12, 1}, 2, 62);
  Model disc = build("disc-cnn-4", {12, 12, 1}, 1, 63);
  Rng order_rng(1);
  Batch b = take_batch(train, shuffled_indices(train.n(), order_rng), 0, 32);

  Tensor j_t = input_gradient(teacher, b.x, b.y, false);
  SgdMomentum opt{0.05, 0.0, {}};
  double first = 0.0, last = 0.0;
  for (int it = 0; it < 25; ++it) {
    StudentObjectiveParts parts =
        student_objective(student, &disc, b.x, b.y, j_t, {1.0, 0.0}, {});
    if (it == 0) first = parts.adv.item();
    last = parts.adv.item();
    std::vector<Tensor> grads = grad(parts.adv, disc.trainable(), false);
    opt.ascend(disc, grads);
  }
  MESSAGE("L_adv first=", first, " last=", last);
  CHECK(last > first);
}

TEST_CASE("run_igam_phase reports match stats and logs") {
  Dataset train = moons(64, "train");
  Dataset holdout = moons(32, "test");
  Model teacher = build("small-cnn", {12, 12, 1}, 2, 71);
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.weights = {0.5, 20.0};
  IgamRunResult result = run_igam_phase(teacher, identity_transform({12, 12, 1}),
                                        train, holdout, "small-cnn",
                                        "disc-cnn-4", cfg);
  CHECK(!result.log.rows.empty());
  CHECK(std::isfinite(result.cos_sim_initial));
  CHECK(std::isfinite(result.cos_sim_final));
  CHECK(result.l_diff_initial > 0.0);
}
