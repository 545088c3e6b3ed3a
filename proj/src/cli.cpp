#include "igam/cli.hpp"

#include <chrono>
#include <cstdio>
#include <optional>

#include <CLI11.hpp>

#include "igam/checkpoint.hpp"
#include "igam/config.hpp"
#include "igam/io.hpp"
#include "igam/kernels.hpp"
#include "igam/metrics.hpp"

namespace igam {

namespace {

struct CliInvocation {
  std::string mode;
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed_override;
};

double epoch_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

Model build_named(const std::string& arch, const Shape& input_shape,
                  int classes, uint64_t seed, const std::string& stream,
                  const std::string& name) {
  Model m = build(arch, input_shape, classes, Rng(seed).stream(stream).next_u64());
  m.name = name;
  return m;
}

EvalRow eval_model(const ExperimentConfig& cfg, const TargetModel& tm,
                   const std::string& name, const Dataset& test) {
  EvalRow row = evaluate(tm, name, test, cfg.eval_attack_list(),
                         Rng(cfg.seed).stream("eval").next_u64(), 0);
  row.mean_alignment = mean_alignment(tm, test, 64);
  return row;
}

EvalReport single_row_report(const ExperimentConfig& cfg, const EvalRow& row) {
  EvalReport report;
  for (const auto& [label, a] : cfg.eval_attack_list()) {
    report.attack_labels.push_back(label);
  }
  report.rows.push_back(row);
  return report;
}

void write_run_outputs(const ExperimentConfig& cfg, const std::string& out_dir,
                       const RunLog* log, const EvalReport* report) {
  ensure_directory(out_dir);
  write_text_file(out_dir + "/config.resolved.cfg", cfg.snapshot());
  if (log != nullptr) write_text_file(out_dir + "/runlog.csv", log->to_csv());
  if (report != nullptr) {
    write_text_file(out_dir + "/report.csv", report->to_csv());
  }
}

// Loads an evaluation subject: the model checkpoint plus, when the config
// names a non-identity transform, its adapter tensors.
TargetModel load_subject(const ExperimentConfig& cfg, const Dataset& data) {
  const Shape target = data.sample_shape();
  if (cfg.transform_kind == "identity") {
    Model m = build(cfg.model_arch, target, data.num_classes, 0);
    load_checkpoint(cfg.model_checkpoint, m);
    m.name = cfg.model_name;
    return TargetModel(std::move(m));
  }
  InputTransform tf = cfg.make_transform(target);
  Model m = build(cfg.model_arch, tf.source_shape, data.num_classes, 0);
  auto tensors = load_tensors(cfg.model_checkpoint);
  std::vector<std::pair<std::string, Tensor>> model_tensors;
  std::vector<Tensor> adapter = tf.trainable_params();
  size_t adapter_loaded = 0;
  for (auto& [name, t] : tensors) {
    if (name.rfind("adapter.", 0) == 0) {
      const size_t idx = adapter_loaded++;
      if (idx >= adapter.size() || adapter[idx].shape() != t.shape()) {
        throw ShapeMismatch("adapter tensor " + name + " does not fit");
      }
      std::copy(t.data(), t.data() + t.size(), adapter[idx].data());
    } else {
      model_tensors.emplace_back(name, t);
    }
  }
  auto params = m.parameters();
  if (params.size() != model_tensors.size()) {
    throw CountMismatch("checkpoint does not match architecture");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = model_tensors[i];
    if (name != params[i].name || t.shape() != params[i].tensor.shape()) {
      throw ShapeMismatch("checkpoint tensor " + name);
    }
    std::copy(t.data(), t.data() + t.size(), params[i].tensor.data());
  }
  m.name = cfg.model_name;
  return TargetModel(std::move(m), std::move(tf));
}

void save_model_and_adapter(const std::string& path, const Model& m,
                            const InputTransform& tf) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const ParamRef& p : m.parameters()) tensors.emplace_back(p.name, p.tensor);
  const std::vector<Tensor> adapter = tf.trainable_params();
  for (size_t i = 0; i < adapter.size(); ++i) {
    tensors.emplace_back("adapter." + std::to_string(i), adapter[i]);
  }
  save_tensors(path, tensors);
}

int run_train_standard(const ExperimentConfig& cfg, const std::string& out_dir,
                       bool adversarial) {
  Dataset train = cfg.load_train();
  Dataset test = cfg.load_test();
  Model m = build_named(cfg.model_arch, train.sample_shape(), train.num_classes,
                        cfg.seed, "init/student", cfg.model_name);
  SgdMomentum opt{cfg.lr, cfg.momentum, {}};
  Rng shuffle = Rng(cfg.seed).stream("data/shuffle");
  Rng attack_rng = Rng(cfg.seed).stream("attack/train");
  RunLog log;
  int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (adversarial) {
      adversarial_train_epoch(m, train, cfg.train_attack(), opt, cfg.batch,
                              shuffle, attack_rng);
    } else {
      standard_train_epoch(m, train, opt, cfg.batch, shuffle, &log, &step);
    }
    std::printf("epoch %d done in %.2fs\n", epoch + 1, epoch_seconds(t0));
  }
  EvalRow row = eval_model(cfg, TargetModel(m), cfg.model_name, test);
  EvalReport report = single_row_report(cfg, row);
  write_run_outputs(cfg, out_dir, &log, &report);
  save_checkpoint(out_dir + "/model.ckpt", m);
  return 0;
}

int run_finetune_teacher(const ExperimentConfig& cfg,
                         const std::string& out_dir) {
  Dataset train = cfg.load_train();
  Dataset test = cfg.load_test();
  InputTransform tf = cfg.make_transform(train.sample_shape());
  Model raw = build(cfg.teacher_arch, tf.source_shape,
                    cfg.teacher_source_classes, 0);
  load_checkpoint(cfg.teacher_checkpoint, raw);
  Model teacher = freeze_all_but_logits(
      raw, train.num_classes, Rng(cfg.seed).stream("init/teacher-head").next_u64());
  teacher.name = cfg.model_name;
  RunLog log;
  TrainConfig tc = cfg.train_config();
  finetune_teacher(teacher, tf, train, tc, &log);
  EvalRow row = eval_model(cfg, TargetModel(teacher, tf), cfg.model_name, test);
  EvalReport report = single_row_report(cfg, row);
  write_run_outputs(cfg, out_dir, &log, &report);
  save_model_and_adapter(out_dir + "/teacher_finetuned.ckpt", teacher, tf);
  return 0;
}

int run_train_igam(const ExperimentConfig& cfg, const std::string& out_dir) {
  Dataset train = cfg.load_train();
  Dataset test = cfg.load_test();
  InputTransform tf = cfg.make_transform(train.sample_shape());
  Model teacher = build(cfg.teacher_arch, tf.source_shape, train.num_classes, 0);
  {  // finetuned teacher: model tensors plus any adapter tensors
    auto tensors = load_tensors(cfg.teacher_checkpoint);
    std::vector<Tensor> adapter = tf.trainable_params();
    size_t ai = 0;
    auto params = teacher.parameters();
    size_t pi = 0;
    for (auto& [name, t] : tensors) {
      if (name.rfind("adapter.", 0) == 0) {
        if (ai >= adapter.size() || adapter[ai].shape() != t.shape()) {
          throw ShapeMismatch("adapter tensor " + name);
        }
        std::copy(t.data(), t.data() + t.size(), adapter[ai++].data());
      } else {
        if (pi >= params.size() || name != params[pi].name ||
            t.shape() != params[pi].tensor.shape()) {
          throw ShapeMismatch("teacher checkpoint tensor " + name);
        }
        std::copy(t.data(), t.data() + t.size(), params[pi++].tensor.data());
      }
    }
    if (pi != params.size()) throw CountMismatch("teacher checkpoint short");
  }
  // the whole teacher, head included, stays fixed during gradient matching
  for (Layer& l : teacher.layers) {
    l.frozen_weight = true;
    l.frozen_bias = true;
  }
  TrainConfig tc = cfg.train_config();
  const auto t0 = std::chrono::steady_clock::now();
  IgamRunResult result = run_igam_phase(teacher, tf, train, test,
                                        cfg.model_arch, cfg.disc_arch, tc);
  std::printf("igam phase done in %.2fs (%d epochs)\n", epoch_seconds(t0),
              cfg.epochs);
  result.student.name = cfg.model_name;
  EvalRow row = eval_model(cfg, TargetModel(result.student), cfg.model_name, test);
  row.mean_cos_sim = result.cos_sim_final;
  EvalReport report = single_row_report(cfg, row);
  write_run_outputs(cfg, out_dir, &result.log, &report);
  save_checkpoint(out_dir + "/student.ckpt", result.student);
  save_checkpoint(out_dir + "/disc.ckpt", result.disc);
  return 0;
}

int run_evaluate(const ExperimentConfig& cfg, const std::string& out_dir) {
  Dataset test = cfg.load_test();
  TargetModel tm = load_subject(cfg, test);
  EvalRow row = eval_model(cfg, tm, cfg.model_name, test);
  EvalReport report = single_row_report(cfg, row);
  write_run_outputs(cfg, out_dir, nullptr, &report);
  return 0;
}

int run_export_gradients(const ExperimentConfig& cfg,
                         const std::string& out_dir) {
  Dataset test = cfg.load_test();
  TargetModel tm = load_subject(cfg, test);
  ensure_directory(out_dir);
  write_text_file(out_dir + "/config.resolved.cfg", cfg.snapshot());
  export_input_gradients(tm, test, cfg.export_count, out_dir + "/gradients",
                         cfg.model_name);
  return 0;
}

int run_landscape(const ExperimentConfig& cfg, const std::string& out_dir) {
  Dataset test = cfg.load_test();
  if (cfg.landscape_index >= test.n()) {
    throw ConfigError("landscape.index beyond test set");
  }
  TargetModel tm = load_subject(cfg, test);
  Dataset one = subset(test, cfg.landscape_index, 1);
  Tensor y = one_hot(one.labels, test.num_classes);
  Rng adv_rng = Rng(cfg.seed).stream("landscape/adv");
  Tensor x_adv = cfg.attack_epsilon > 0.0
                     ? pgd(tm, one.images, y, cfg.train_attack(), &adv_rng)
                     : one.images;
  Tensor adv_dir = x_adv.detach();
  kernels::active().axpy(adv_dir.data(), -1.0, one.images.data(),
                         adv_dir.size());
  Rng rand_rng = Rng(cfg.seed).stream("landscape/rand");
  Tensor rand_dir = Tensor::normal(one.images.shape(), 0.0, 1.0, rand_rng);
  const double norm = norm2_values(rand_dir);
  if (norm > 0.0) {
    kernels::active().affine(rand_dir.data(), rand_dir.data(), 1.0 / norm, 0.0,
                             rand_dir.size());
  }
  ensure_directory(out_dir);
  write_text_file(out_dir + "/config.resolved.cfg", cfg.snapshot());
  loss_landscape_grid(tm, one.images, y, adv_dir, rand_dir,
                      cfg.landscape_extent, cfg.landscape_resolution,
                      out_dir + "/landscape.csv");
  return 0;
}

int run_report(const ExperimentConfig& cfg, const std::string& out_dir) {
  EvalReport merged;
  bool first = true;
  for (const std::string& tok : split(cfg.report_inputs, ',')) {
    const std::string path = trim(tok);
    if (path.empty()) continue;
    EvalReport part = EvalReport::from_csv(read_text_file(path));
    if (first) {
      merged.attack_labels = part.attack_labels;
      first = false;
    } else if (merged.attack_labels != part.attack_labels) {
      throw ConfigError("report inputs disagree on attack columns: " + path);
    }
    for (EvalRow& row : part.rows) merged.rows.push_back(std::move(row));
  }
  if (first) throw ConfigError("report.inputs named no readable csv");
  ensure_directory(out_dir);
  write_text_file(out_dir + "/config.resolved.cfg", cfg.snapshot());
  write_text_file(out_dir + "/report.csv", merged.to_csv());
  return 0;
}

int dispatch(const CliInvocation& inv) {
  std::vector<std::string> errors;
  ConfigMap map = ConfigMap::parse(read_text_file(inv.config_path), errors);
  ExperimentConfig cfg = ExperimentConfig::resolve(inv.mode, map, errors);
  if (inv.seed_override) cfg.seed = *inv.seed_override;
  if (!errors.empty()) {
    for (const std::string& e : errors) {
      std::fprintf(stderr, "config-error: %s\n", e.c_str());
    }
    return 2;
  }
  if (inv.mode == "train-standard") return run_train_standard(cfg, inv.out_dir, false);
  if (inv.mode == "train-at") return run_train_standard(cfg, inv.out_dir, true);
  if (inv.mode == "finetune-teacher") return run_finetune_teacher(cfg, inv.out_dir);
  if (inv.mode == "train-igam") return run_train_igam(cfg, inv.out_dir);
  if (inv.mode == "evaluate") return run_evaluate(cfg, inv.out_dir);
  if (inv.mode == "export-gradients") return run_export_gradients(cfg, inv.out_dir);
  if (inv.mode == "landscape") return run_landscape(cfg, inv.out_dir);
  if (inv.mode == "report") return run_report(cfg, inv.out_dir);
  std::fprintf(stderr, "error: unhandled mode %s\n", inv.mode.c_str());
  return 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"input-gradient robustness transfer experiments"};
  app.require_subcommand(1);

  CliInvocation inv;
  const std::vector<std::string> modes = {
      "train-standard", "train-at",         "finetune-teacher",
      "train-igam",     "evaluate",         "export-gradients",
      "landscape",      "report"};
  for (const std::string& mode : modes) {
    CLI::App* sub = app.add_subcommand(mode);
    sub->add_option("--config", inv.config_path, "experiment config file")
        ->required();
    sub->add_option("--out", inv.out_dir, "output directory")->required();
    sub->add_option("--seed", [&inv](const std::vector<std::string>& vals) {
      inv.seed_override = std::stoull(vals.at(0));
      return true;
    }, "root seed override");
    sub->callback([&inv, mode]() { inv.mode = mode; });
  }

  std::vector<const char*> argv;
  argv.push_back("igam");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return dispatch(inv);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace igam
