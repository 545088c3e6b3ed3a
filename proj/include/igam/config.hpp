#pragma once

#include <string>
#include <vector>

#include "igam/attacks.hpp"
#include "igam/data.hpp"
#include "igam/trainer.hpp"
#include "igam/transforms.hpp"

namespace igam {

// Flat key = value configuration with dotted section keys. '#' starts a
// comment; unknown keys and type errors are collected and reported all at
// once rather than first-failure.
struct ConfigMap {
  std::vector<std::pair<std::string, std::string>> items;

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;

  static ConfigMap parse(const std::string& text,
                         std::vector<std::string>& errors);
};

struct ExperimentConfig {
  std::string mode;
  uint64_t seed = 7;

  // dataset
  std::string dataset_kind = "raster-moons";
  int n_train = 512, n_test = 256;
  int height = 28, width = 28, channels = 1;
  int classes = 2;
  double noise = 0.05;
  std::string train_images, train_labels, test_images, test_labels;

  // models
  std::string model_arch = "small-cnn";
  std::string model_name;
  std::string model_checkpoint;
  std::string teacher_arch = "small-cnn";
  std::string teacher_checkpoint;
  int teacher_source_classes = 0;  // 0: same as dataset classes
  double lr_teacher = 0.05;
  int finetune_epochs = 5;
  std::string disc_arch = "disc-cnn-4";
  double lr_disc = 0.02;

  // transform
  std::string transform_kind = "identity";
  int transform_factor = 2;
  int crop_height = 14, crop_width = 14;
  int pad_height = 28, pad_width = 28;
  int source_hw = 28, source_channels = 1;

  // training
  double lr = 0.05;
  double momentum = 0.9;
  int epochs = 30;
  int batch = 64;

  // igam
  double lambda_adv = 1.0;
  double lambda_diff = 50.0;
  int disc_period = 5;
  bool non_saturating = false;
  bool standardize_j = false;

  // attack / eval
  double attack_epsilon = 0.25;
  double attack_eta = 0.0;  // 0: resolved to epsilon/4
  int attack_steps = 7;
  bool attack_random_start = true;
  std::string eval_attacks = "fgsm,pgd5,pgd10,pgd20";
  double eval_eta = 0.0;  // 0: resolved to epsilon/4
  bool eval_random_start = true;

  // landscape / export / report
  double landscape_extent = 0.3;
  int landscape_resolution = 21;
  int landscape_index = 0;
  int export_count = 8;
  std::string report_inputs;

  // Parses + validates for a mode; returns every error at once.
  static ExperimentConfig resolve(const std::string& mode, const ConfigMap& map,
                                  std::vector<std::string>& errors);

  // Canonical snapshot of every key relevant to the mode, with effective
  // values; reruns from the snapshot reproduce the run bit for bit.
  std::string snapshot() const;

  // ---- derived objects ----
  Dataset load_train() const;
  Dataset load_test() const;
  InputTransform make_transform(const Shape& target_shape) const;
  TrainConfig train_config() const;
  AttackConfig train_attack() const;
  std::vector<std::pair<std::string, AttackConfig>> eval_attack_list() const;
};

}  // namespace igam
