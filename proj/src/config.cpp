#include "igam/config.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "igam/io.hpp"

namespace igam {

bool ConfigMap::has(const std::string& key) const {
  for (const auto& [k, v] : items) {
    if (k == key) return true;
  }
  return false;
}

std::string ConfigMap::get(const std::string& key,
                           const std::string& fallback) const {
  for (const auto& [k, v] : items) {
    if (k == key) return v;
  }
  return fallback;
}

ConfigMap ConfigMap::parse(const std::string& text,
                           std::vector<std::string>& errors) {
  ConfigMap map;
  std::set<std::string> seen;
  const std::vector<std::string> lines = split(text, '\n');
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string line = lines[i];
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      errors.push_back("line " + std::to_string(i + 1) + ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      errors.push_back("line " + std::to_string(i + 1) + ": empty key");
      continue;
    }
    if (!seen.insert(key).second) {
      errors.push_back("duplicate key: " + key);
      continue;
    }
    map.items.emplace_back(key, value);
  }
  return map;
}

namespace {

struct KeyDesc {
  const char* key;
  // modes the key participates in; "*" = every mode
  std::vector<const char*> modes;
  std::function<bool(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

bool to_int(const std::string& s, int& out) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) return false;
    out = v;
    return true;
  } catch (...) {
    return false;
  }
}

bool to_u64(const std::string& s, uint64_t& out) {
  try {
    size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) return false;
    out = v;
    return true;
  } catch (...) {
    return false;
  }
}

bool to_double(const std::string& s, double& out) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) return false;
    out = v;
    return true;
  } catch (...) {
    return false;
  }
}

bool to_bool(const std::string& s, bool& out) {
  if (s == "true") {
    out = true;
    return true;
  }
  if (s == "false") {
    out = false;
    return true;
  }
  return false;
}

#define INT_KEY(NAME, FIELD, ...)                                       \
  KeyDesc {                                                             \
    NAME, {__VA_ARGS__},                                                \
        [](ExperimentConfig& c, const std::string& s) {                 \
          return to_int(s, c.FIELD);                                    \
        },                                                              \
        [](const ExperimentConfig& c) { return std::to_string(c.FIELD); } \
  }

#define DBL_KEY(NAME, FIELD, ...)                                      \
  KeyDesc {                                                            \
    NAME, {__VA_ARGS__},                                               \
        [](ExperimentConfig& c, const std::string& s) {                \
          return to_double(s, c.FIELD);                                \
        },                                                             \
        [](const ExperimentConfig& c) { return fmt_double(c.FIELD); }  \
  }

#define STR_KEY(NAME, FIELD, ...)                                \
  KeyDesc {                                                      \
    NAME, {__VA_ARGS__},                                         \
        [](ExperimentConfig& c, const std::string& s) {          \
          c.FIELD = s;                                           \
          return true;                                           \
        },                                                       \
        [](const ExperimentConfig& c) { return c.FIELD; }        \
  }

#define BOOL_KEY(NAME, FIELD, ...)                                         \
  KeyDesc {                                                                \
    NAME, {__VA_ARGS__},                                                   \
        [](ExperimentConfig& c, const std::string& s) {                    \
          return to_bool(s, c.FIELD);                                      \
        },                                                                 \
        [](const ExperimentConfig& c) {                                    \
          return std::string(c.FIELD ? "true" : "false");                  \
        }                                                                  \
  }

const std::vector<KeyDesc>& registry() {
  static const std::vector<KeyDesc> keys = {
      KeyDesc{"seed",
              {"*"},
              [](ExperimentConfig& c, const std::string& s) {
                return to_u64(s, c.seed);
              },
              [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      STR_KEY("dataset.kind", dataset_kind, "*"),
      INT_KEY("dataset.n_train", n_train, "*"),
      INT_KEY("dataset.n_test", n_test, "*"),
      INT_KEY("dataset.height", height, "*"),
      INT_KEY("dataset.width", width, "*"),
      INT_KEY("dataset.channels", channels, "*"),
      INT_KEY("dataset.classes", classes, "*"),
      DBL_KEY("dataset.noise", noise, "*"),
      STR_KEY("dataset.train_images", train_images, "*"),
      STR_KEY("dataset.train_labels", train_labels, "*"),
      STR_KEY("dataset.test_images", test_images, "*"),
      STR_KEY("dataset.test_labels", test_labels, "*"),
      STR_KEY("model.arch", model_arch, "train-standard", "train-at",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      STR_KEY("model.name", model_name, "train-standard", "train-at",
              "train-igam", "finetune-teacher", "evaluate", "export-gradients",
              "landscape"),
      STR_KEY("model.checkpoint", model_checkpoint, "evaluate",
              "export-gradients", "landscape"),
      STR_KEY("teacher.arch", teacher_arch, "finetune-teacher", "train-igam"),
      STR_KEY("teacher.checkpoint", teacher_checkpoint, "finetune-teacher",
              "train-igam"),
      INT_KEY("teacher.source_classes", teacher_source_classes,
              "finetune-teacher"),
      DBL_KEY("teacher.lr", lr_teacher, "finetune-teacher"),
      INT_KEY("finetune.epochs", finetune_epochs, "finetune-teacher"),
      STR_KEY("disc.arch", disc_arch, "train-igam"),
      DBL_KEY("disc.lr", lr_disc, "train-igam"),
      STR_KEY("transform.kind", transform_kind, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      INT_KEY("transform.factor", transform_factor, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      INT_KEY("transform.crop_height", crop_height, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      INT_KEY("transform.crop_width", crop_width, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      INT_KEY("transform.pad_height", pad_height, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      INT_KEY("transform.pad_width", pad_width, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      INT_KEY("transform.source_hw", source_hw, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      INT_KEY("transform.source_channels", source_channels, "finetune-teacher",
              "train-igam", "evaluate", "export-gradients", "landscape"),
      DBL_KEY("train.lr", lr, "train-standard", "train-at", "train-igam"),
      DBL_KEY("train.momentum", momentum, "train-standard", "train-at",
              "train-igam", "finetune-teacher"),
      INT_KEY("train.epochs", epochs, "train-standard", "train-at",
              "train-igam"),
      INT_KEY("train.batch", batch, "train-standard", "train-at", "train-igam",
              "finetune-teacher"),
      DBL_KEY("igam.lambda_adv", lambda_adv, "train-igam"),
      DBL_KEY("igam.lambda_diff", lambda_diff, "train-igam"),
      INT_KEY("igam.disc_period", disc_period, "train-igam"),
      BOOL_KEY("igam.non_saturating", non_saturating, "train-igam"),
      BOOL_KEY("igam.standardize_j", standardize_j, "train-igam"),
      DBL_KEY("attack.epsilon", attack_epsilon, "train-standard", "train-at",
              "train-igam", "evaluate", "landscape"),
      DBL_KEY("attack.eta", attack_eta, "train-at", "landscape"),
      INT_KEY("attack.steps", attack_steps, "train-at", "landscape"),
      BOOL_KEY("attack.random_start", attack_random_start, "train-at",
               "landscape"),
      STR_KEY("eval.attacks", eval_attacks, "train-standard", "train-at",
              "train-igam", "evaluate"),
      DBL_KEY("eval.eta", eval_eta, "train-standard", "train-at", "train-igam",
              "evaluate"),
      BOOL_KEY("eval.random_start", eval_random_start, "train-standard",
               "train-at", "train-igam", "evaluate"),
      DBL_KEY("landscape.extent", landscape_extent, "landscape"),
      INT_KEY("landscape.resolution", landscape_resolution, "landscape"),
      INT_KEY("landscape.index", landscape_index, "landscape"),
      INT_KEY("export.count", export_count, "export-gradients"),
      STR_KEY("report.inputs", report_inputs, "report"),
  };
  return keys;
}

#undef INT_KEY
#undef DBL_KEY
#undef STR_KEY
#undef BOOL_KEY

bool key_in_mode(const KeyDesc& desc, const std::string& mode) {
  if (mode == "report") {
    // report merges CSVs and touches no dataset or model
    for (const char* m : desc.modes) {
      if (std::string(m) == "report") return true;
    }
    return std::string(desc.key) == "seed";
  }
  for (const char* m : desc.modes) {
    if (std::string(m) == "*" || std::string(m) == mode) return true;
  }
  return false;
}

const std::set<std::string>& known_modes() {
  static const std::set<std::string> modes = {
      "train-standard", "train-at",         "finetune-teacher",
      "train-igam",     "evaluate",         "export-gradients",
      "landscape",      "report"};
  return modes;
}

}  // namespace

ExperimentConfig ExperimentConfig::resolve(const std::string& mode,
                                           const ConfigMap& map,
                                           std::vector<std::string>& errors) {
  ExperimentConfig cfg;
  cfg.mode = mode;
  if (known_modes().find(mode) == known_modes().end()) {
    errors.push_back("unknown mode: " + mode);
    return cfg;
  }
  for (const auto& [key, value] : map.items) {
    if (key == "mode") {
      if (value != mode) {
        errors.push_back("config mode '" + value +
                         "' does not match subcommand '" + mode + "'");
      }
      continue;
    }
    const KeyDesc* desc = nullptr;
    for (const KeyDesc& d : registry()) {
      if (key == d.key) {
        desc = &d;
        break;
      }
    }
    if (desc == nullptr) {
      errors.push_back("unknown key: " + key);
      continue;
    }
    if (!key_in_mode(*desc, mode)) {
      errors.push_back("key not used by mode " + mode + ": " + key);
      continue;
    }
    if (!desc->set(cfg, value)) {
      errors.push_back("bad value for " + key + ": '" + value + "'");
    }
  }

  // semantic validation, all collected
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  if (mode != "report") {
    require(cfg.dataset_kind == "raster-moons" || cfg.dataset_kind == "blob-k" ||
                cfg.dataset_kind == "idx",
            "dataset.kind must be raster-moons, blob-k or idx");
    if (cfg.dataset_kind == "idx") {
      require(!cfg.train_images.empty() && !cfg.train_labels.empty(),
              "idx dataset needs dataset.train_images and dataset.train_labels");
      require(!cfg.test_images.empty() && !cfg.test_labels.empty(),
              "idx dataset needs dataset.test_images and dataset.test_labels");
    } else {
      require(cfg.n_train >= 1 && cfg.n_test >= 1,
              "dataset sizes must be >= 1");
      require(cfg.height >= 4 && cfg.width >= 4 && cfg.channels >= 1,
              "dataset dimensions too small");
      require(cfg.classes >= 2, "dataset.classes must be >= 2");
    }
    require(cfg.batch >= 1, "train.batch must be >= 1");
  }
  if (mode == "train-standard" || mode == "train-at" || mode == "train-igam") {
    require(cfg.lr > 0.0, "train.lr must be > 0");
    require(cfg.momentum >= 0.0 && cfg.momentum < 1.0,
            "train.momentum must be in [0,1)");
    require(cfg.epochs >= 1, "train.epochs must be >= 1");
  }
  if (mode == "train-at" || mode == "landscape") {
    require(cfg.attack_epsilon >= 0.0, "attack.epsilon must be >= 0");
    require(cfg.attack_steps >= 1, "attack.steps must be >= 1");
    require(cfg.attack_eta >= 0.0, "attack.eta must be >= 0");
  }
  if (mode == "finetune-teacher" || mode == "train-igam") {
    require(!cfg.teacher_checkpoint.empty(),
            "teacher.checkpoint is required");
    require(cfg.finetune_epochs >= 0, "finetune.epochs must be >= 0");
    require(cfg.lr_teacher > 0.0, "teacher.lr must be > 0");
  }
  if (mode == "train-igam") {
    require(cfg.lambda_adv >= 0.0 && cfg.lambda_diff >= 0.0,
            "igam lambda weights must be >= 0");
    require(cfg.disc_period >= 1, "igam.disc_period must be >= 1");
    require(cfg.lr_disc > 0.0, "disc.lr must be > 0");
  }
  if (mode == "evaluate" || mode == "export-gradients" || mode == "landscape") {
    require(!cfg.model_checkpoint.empty(), "model.checkpoint is required");
  }
  if (mode == "landscape") {
    require(cfg.landscape_resolution >= 1,
            "landscape.resolution must be >= 1");
    require(cfg.landscape_extent >= 0.0, "landscape.extent must be >= 0");
    require(cfg.landscape_index >= 0, "landscape.index must be >= 0");
  }
  if (mode == "export-gradients") {
    require(cfg.export_count >= 1, "export.count must be >= 1");
  }
  if (mode == "report") {
    require(!cfg.report_inputs.empty(), "report.inputs is required");
  }
  if (mode == "evaluate" || mode == "train-standard" || mode == "train-at" ||
      mode == "train-igam") {
    for (const std::string& tok : split(cfg.eval_attacks, ',')) {
      const std::string t = trim(tok);
      if (t == "fgsm" || t.empty()) continue;
      int steps = 0;
      if (t.rfind("pgd", 0) != 0 || !to_int(t.substr(3), steps) || steps < 1) {
        errors.push_back("bad eval.attacks token: '" + t + "'");
      }
    }
  }

  // resolve defaulted step sizes so the snapshot pins them
  if (cfg.attack_eta == 0.0) {
    cfg.attack_eta =
        cfg.attack_epsilon > 0.0 ? cfg.attack_epsilon / 4.0 : 0.0625;
  }
  if (cfg.eval_eta == 0.0) {
    cfg.eval_eta = cfg.attack_epsilon > 0.0 ? cfg.attack_epsilon / 4.0 : 0.0625;
  }
  if (cfg.model_name.empty()) cfg.model_name = mode;
  if (cfg.teacher_source_classes == 0) cfg.teacher_source_classes = cfg.classes;
  return cfg;
}

std::string ExperimentConfig::snapshot() const {
  std::ostringstream os;
  os << "mode = " << mode << "\n";
  for (const KeyDesc& d : registry()) {
    if (!key_in_mode(d, mode)) continue;
    os << d.key << " = " << d.get(*this) << "\n";
  }
  return os.str();
}

Dataset ExperimentConfig::load_train() const {
  if (dataset_kind == "idx") return load_idx(train_images, train_labels);
  SynthSpec spec{dataset_kind, n_train,  height, width,
                 channels,     classes,  noise,  "train"};
  return synth_dataset(spec, seed);
}

Dataset ExperimentConfig::load_test() const {
  if (dataset_kind == "idx") return load_idx(test_images, test_labels);
  SynthSpec spec{dataset_kind, n_test,  height, width,
                 channels,     classes, noise,  "test"};
  return synth_dataset(spec, seed);
}

InputTransform ExperimentConfig::make_transform(const Shape& target) const {
  std::vector<InputTransform> chain;
  Shape cur = target;
  for (const std::string& tok : split(transform_kind, ',')) {
    const std::string kind = trim(tok);
    if (kind.empty() || kind == "identity") {
      chain.push_back(identity_transform(cur));
    } else if (kind == "avgpool_resize") {
      chain.push_back(avgpool_resize_transform(cur, transform_factor));
    } else if (kind == "bilinear_upsize") {
      chain.push_back(bilinear_upsize_transform(cur, transform_factor));
    } else if (kind == "center_crop") {
      chain.push_back(center_crop_transform(cur, crop_height, crop_width));
    } else if (kind == "center_pad") {
      chain.push_back(center_pad_transform(cur, pad_height, pad_width));
    } else if (kind == "random_pad") {
      chain.push_back(random_pad_transform(cur, pad_height, pad_width));
    } else if (kind == "channel_average") {
      chain.push_back(channel_average_transform(cur));
    } else if (kind == "transpose_conv") {
      chain.push_back(transpose_conv_transform(
          cur, source_hw, source_channels,
          Rng(seed).stream("adapter").next_u64()));
    } else {
      throw ConfigError("unknown transform kind: " + kind);
    }
    cur = chain.back().source_shape;
  }
  if (chain.size() == 1) return chain[0];
  return composite_transform(std::move(chain));
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.lr_teacher = lr_teacher;
  t.lr_student = lr;
  t.lr_disc = lr_disc;
  t.momentum = momentum;
  t.weights = {lambda_adv, lambda_diff};
  t.disc_update_period = disc_period;
  t.finetune_epochs = finetune_epochs;
  t.epochs = epochs;
  t.batch_size = batch;
  t.seed = seed;
  t.non_saturating = non_saturating;
  t.standardize_j = standardize_j;
  t.train_attack = train_attack();
  return t;
}

AttackConfig ExperimentConfig::train_attack() const {
  AttackConfig a;
  a.epsilon = attack_epsilon;
  a.eta = attack_eta;
  a.steps = attack_steps;
  a.random_start = attack_random_start;
  return a;
}

std::vector<std::pair<std::string, AttackConfig>>
ExperimentConfig::eval_attack_list() const {
  std::vector<std::pair<std::string, AttackConfig>> out;
  for (const std::string& tok : split(eval_attacks, ',')) {
    const std::string t = trim(tok);
    if (t.empty()) continue;
    AttackConfig a;
    a.epsilon = attack_epsilon;
    if (t == "fgsm") {
      a.steps = 1;
      a.eta = attack_epsilon > 0.0 ? attack_epsilon : 1.0;  // one saturated step
      a.random_start = false;
    } else {
      int steps = 0;
      if (t.rfind("pgd", 0) != 0 || !to_int(t.substr(3), steps) || steps < 1) {
        throw ConfigError("bad eval attack token: " + t);
      }
      a.steps = steps;
      a.eta = eval_eta;
      a.random_start = eval_random_start;
    }
    out.emplace_back(t, a);
  }
  return out;
}

}  // namespace igam
