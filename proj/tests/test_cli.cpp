#include <doctest.h>

#include <filesystem>

#include "igam/cli.hpp"
#include "igam/config.hpp"
#include "igam/io.hpp"

using namespace igam;

namespace {

std::string temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  static int counter = 0;
  const std::string dir =
      (fs::temp_directory_path() / (tag + std::to_string(counter++))).string();
  fs::create_directories(dir);
  return dir;
}

std::string small_train_cfg() {
  return "seed = 5\n"
         "dataset.kind = raster-moons\n"
         "dataset.n_train = 48\n"
         "dataset.n_test = 32\n"
         "dataset.height = 10\n"
         "dataset.width = 10\n"
         "model.arch = mlp-2\n"
         "train.epochs = 2\n"
         "train.batch = 16\n"
         "attack.epsilon = 0.1\n"
         "eval.attacks = fgsm,pgd3\n";
}

}  // namespace

TEST_CASE("config parsing collects all errors at once") {
  std::vector<std::string> errors;
  ConfigMap map = ConfigMap::parse(
      "x.unknown = 1\n"
      "train.lr = banana\n"
      "dataset.kind = weird\n"
      "no_equals_line\n"
      "train.lr = 0.1\n",  // duplicate
      errors);
  ExperimentConfig::resolve("train-standard", map, errors);
  // bad line, duplicate, unknown key, bad value, bad dataset kind
  CHECK(errors.size() >= 5);
}

TEST_CASE("mode gating of keys") {
  std::vector<std::string> errors;
  ConfigMap map = ConfigMap::parse("igam.lambda_adv = 1\n", errors);
  ExperimentConfig::resolve("train-standard", map, errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("not used by mode") != std::string::npos);
}

TEST_CASE("snapshot resolves defaults and round trips") {
  std::vector<std::string> errors;
  ConfigMap map = ConfigMap::parse("attack.epsilon = 0.2\n", errors);
  ExperimentConfig cfg = ExperimentConfig::resolve("train-at", map, errors);
  REQUIRE(errors.empty());
  CHECK(cfg.attack_eta == doctest::Approx(0.05));  // resolved to epsilon/4

  const std::string snap = cfg.snapshot();
  std::vector<std::string> errors2;
  ConfigMap map2 = ConfigMap::parse(snap, errors2);
  ExperimentConfig cfg2 = ExperimentConfig::resolve("train-at", map2, errors2);
  REQUIRE(errors2.empty());
  CHECK(cfg2.snapshot() == snap);

  // snapshot carries the mode; a different subcommand rejects it
  std::vector<std::string> errors3;
  ConfigMap map3 = ConfigMap::parse(snap, errors3);
  ExperimentConfig::resolve("train-standard", map3, errors3);
  CHECK(!errors3.empty());
}

TEST_CASE("cli: train-standard writes artifacts and is rerunnable from snapshot") {
  const std::string dir = temp_dir("igam_cli_std");
  write_text_file(dir + "/run.cfg", small_train_cfg());
  const int rc = run_cli({"train-standard", "--config", dir + "/run.cfg",
                          "--out", dir + "/out"});
  REQUIRE(rc == 0);
  CHECK(std::filesystem::exists(dir + "/out/model.ckpt"));
  CHECK(std::filesystem::exists(dir + "/out/runlog.csv"));
  CHECK(std::filesystem::exists(dir + "/out/report.csv"));
  CHECK(std::filesystem::exists(dir + "/out/config.resolved.cfg"));

  // rerun from the resolved snapshot: byte-identical CSV outputs
  const int rc2 = run_cli({"train-standard", "--config",
                           dir + "/out/config.resolved.cfg", "--out",
                           dir + "/out2"});
  REQUIRE(rc2 == 0);
  CHECK(read_text_file(dir + "/out2/runlog.csv") ==
        read_text_file(dir + "/out/runlog.csv"));
  CHECK(read_text_file(dir + "/out2/report.csv") ==
        read_text_file(dir + "/out/report.csv"));
  CHECK(read_text_file(dir + "/out2/config.resolved.cfg") ==
        read_text_file(dir + "/out/config.resolved.cfg"));
}

TEST_CASE("cli: evaluate reproduces the accuracy logged at train time") {
  const std::string dir = temp_dir("igam_cli_eval");
  write_text_file(dir + "/run.cfg", small_train_cfg());
  REQUIRE(run_cli({"train-standard", "--config", dir + "/run.cfg", "--out",
                   dir + "/out"}) == 0);
  const std::string eval_cfg =
      "seed = 5\n"
      "dataset.kind = raster-moons\n"
      "dataset.n_train = 48\n"
      "dataset.n_test = 32\n"
      "dataset.height = 10\n"
      "dataset.width = 10\n"
      "model.arch = mlp-2\n"
      "attack.epsilon = 0.1\n"
      "eval.attacks = fgsm,pgd3\n"
      "model.checkpoint = " + dir + "/out/model.ckpt\n" +
      "model.name = train-standard\n";
  write_text_file(dir + "/eval.cfg", eval_cfg);
  REQUIRE(run_cli({"evaluate", "--config", dir + "/eval.cfg", "--out",
                   dir + "/eval"}) == 0);
  CHECK(read_text_file(dir + "/eval/report.csv") ==
        read_text_file(dir + "/out/report.csv"));
}

TEST_CASE("cli: report merges rows into one table") {
  const std::string dir = temp_dir("igam_cli_report");
  write_text_file(dir + "/a.csv",
                  "model,clean,fgsm,cos_sim,alignment\nalpha,90,50,0,1\n");
  write_text_file(dir + "/b.csv",
                  "model,clean,fgsm,cos_sim,alignment\nbeta,80,60,0,2\n");
  write_text_file(dir + "/report.cfg",
                  "report.inputs = " + dir + "/a.csv," + dir + "/b.csv\n");
  REQUIRE(run_cli({"report", "--config", dir + "/report.cfg", "--out",
                   dir + "/out"}) == 0);
  const std::string merged = read_text_file(dir + "/out/report.csv");
  CHECK(merged.find("alpha") != std::string::npos);
  CHECK(merged.find("beta") != std::string::npos);
  CHECK(split(merged, '\n').size() == 4);  // header + 2 rows + empty
}

TEST_CASE("cli: bad config yields exit code 2") {
  const std::string dir = temp_dir("igam_cli_bad");
  write_text_file(dir + "/bad.cfg", "definitely.unknown = 1\n");
  CHECK(run_cli({"train-standard", "--config", dir + "/bad.cfg", "--out",
                 dir + "/out"}) == 2);
}

TEST_CASE("cli: landscape and export-gradients run end to end") {
  const std::string dir = temp_dir("igam_cli_land");
  write_text_file(dir + "/run.cfg", small_train_cfg());
  REQUIRE(run_cli({"train-standard", "--config", dir + "/run.cfg", "--out",
                   dir + "/out"}) == 0);

  const std::string land_cfg =
      "seed = 5\n"
      "dataset.kind = raster-moons\n"
      "dataset.n_train = 48\n"
      "dataset.n_test = 32\n"
      "dataset.height = 10\n"
      "dataset.width = 10\n"
      "model.arch = mlp-2\n"
      "model.checkpoint = " + dir + "/out/model.ckpt\n"
      "attack.epsilon = 0.1\n"
      "landscape.resolution = 5\n"
      "landscape.extent = 0.2\n";
  write_text_file(dir + "/land.cfg", land_cfg);
  REQUIRE(run_cli({"landscape", "--config", dir + "/land.cfg", "--out",
                   dir + "/land"}) == 0);
  const std::string csv = read_text_file(dir + "/land/landscape.csv");
  CHECK(csv.rfind("a,b,loss,class\n", 0) == 0);

  // rerun from snapshot, byte-identical
  REQUIRE(run_cli({"landscape", "--config", dir + "/land/config.resolved.cfg",
                   "--out", dir + "/land2"}) == 0);
  CHECK(read_text_file(dir + "/land2/landscape.csv") == csv);

  const std::string exp_cfg =
      "seed = 5\n"
      "dataset.kind = raster-moons\n"
      "dataset.n_train = 48\n"
      "dataset.n_test = 32\n"
      "dataset.height = 10\n"
      "dataset.width = 10\n"
      "model.arch = mlp-2\n"
      "model.checkpoint = " + dir + "/out/model.ckpt\n"
      "export.count = 3\n";
  write_text_file(dir + "/exp.cfg", exp_cfg);
  REQUIRE(run_cli({"export-gradients", "--config", dir + "/exp.cfg", "--out",
                   dir + "/grads"}) == 0);
  int files = 0;
  for (const auto& entry :
       std::filesystem::directory_iterator(dir + "/grads/gradients")) {
    (void)entry;
    ++files;
  }
  CHECK(files == 3);
}
