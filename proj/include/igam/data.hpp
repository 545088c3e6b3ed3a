#pragma once

#include <string>
#include <vector>

#include "igam/rng.hpp"
#include "igam/tensor.hpp"
#include "igam/transforms.hpp"

namespace igam {

struct Dataset {
  Tensor images;            // [N,H,W,C], values in [0,1]
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;
  std::string split;

  int64_t n() const { return images.dim(0); }
  Shape sample_shape() const {
    return {images.dim(1), images.dim(2), images.dim(3)};
  }
};

// MNIST-style IDX pair (big-endian headers, magic 0x803 / 0x801); pixels are
// rescaled from [0,255] to [0,1].
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path);

struct SynthSpec {
  std::string generator;  // "raster-moons" | "blob-k"
  int n = 1000;
  int height = 28, width = 28, channels = 1;
  int classes = 2;        // blob count for blob-k; raster-moons is 2-class
  double noise = 0.05;    // positional jitter, in moon-space units
  std::string split = "train";
};

// Deterministic under seed; class labels are assigned round-robin so counts
// stay balanced within 1.
Dataset synth_dataset(const SynthSpec& spec, uint64_t seed);

Tensor one_hot(const std::vector<int>& labels, int num_classes);

struct Batch {
  Tensor x;                 // [B,H,W,C]
  Tensor y;                 // [B,K] one-hot
  std::vector<int> labels;
};

std::vector<int> shuffled_indices(int64_t n, Rng& rng);
Batch take_batch(const Dataset& d, const std::vector<int>& order,
                 int64_t begin, int64_t count);
Dataset subset(const Dataset& d, int64_t begin, int64_t count);

// Maps every image through a (resolved) transform; used to build the smaller
// source-task datasets the teacher is pre-trained on.
Dataset transform_dataset(const Dataset& d, const InputTransform& t);

}  // namespace igam
