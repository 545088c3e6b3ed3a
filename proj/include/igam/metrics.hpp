#pragma once

#include <string>
#include <utility>
#include <vector>

#include "igam/attacks.hpp"
#include "igam/classifier.hpp"
#include "igam/data.hpp"

namespace igam {

struct EvalRow {
  std::string model;
  double clean = 0.0;  // percent
  std::vector<std::pair<std::string, double>> attacks;  // (label, percent)
  double mean_cos_sim = 0.0;    // cos(J_s, J_t) when a teacher is around
  double mean_alignment = 0.0;  // section-6 alpha averaged over samples
};

struct EvalReport {
  std::vector<std::string> attack_labels;
  std::vector<EvalRow> rows;

  std::string to_csv() const;
  static EvalReport from_csv(const std::string& text);
};

// Accuracy on clean data and under each configured attack. Evaluation runs
// in fixed-size batches; IGAM_THREADS (or `threads`) fans batches out to
// workers and the per-batch counts are reduced in batch order, so the result
// does not depend on the thread count.
EvalRow evaluate(const TargetModel& model, const std::string& name,
                 const Dataset& test,
                 const std::vector<std::pair<std::string, AttackConfig>>& atks,
                 uint64_t attack_seed, int threads = 0);

double clean_accuracy(const TargetModel& model, const Dataset& test);

// alpha(x) = |<x, g>| / ||g|| with g the input gradient of the top-two logit
// margin; ties take the two lowest logit indices.
double alignment(const TargetModel& model, const Tensor& x_single);
double mean_alignment(const TargetModel& model, const Dataset& data,
                      int max_samples);

// Mean per-sample cosine between the two models' input gradients.
double mean_gradient_cosine(const TargetModel& a, const TargetModel& b,
                            const Dataset& data, int max_samples);

// Mean over rows of cos(a_i, b_i) for two batches of equally-shaped tensors.
double mean_sample_cosine(const Tensor& a, const Tensor& b);

// Per-image min-max normalized J rendered to 8-bit PGM (1 channel) or PPM
// (3 channels); a constant J maps to mid-gray.
std::vector<std::string> export_input_gradients(const TargetModel& model,
                                                const Dataset& data, int count,
                                                const std::string& out_dir,
                                                const std::string& model_name);

// (resolution x resolution) grid of loss and predicted class at
// x + a*adv_dir + b*rand_dir, written as CSV "a,b,loss,class".
void loss_landscape_grid(const TargetModel& model, const Tensor& x,
                         const Tensor& y_onehot, const Tensor& adv_dir,
                         const Tensor& rand_dir, double extent, int resolution,
                         const std::string& csv_path);

// Mean lag-1 spatial autocorrelation of a J image; robust models produce
// visibly smoother input gradients and score higher here.
double gradient_smoothness(const TargetModel& model, const Dataset& data,
                           int max_samples);

int eval_thread_count(int requested);

}  // namespace igam
