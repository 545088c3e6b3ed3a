#include "igam/data.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "igam/autodiff.hpp"

namespace igam {

namespace {

uint32_t read_u32_be(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw Truncated(path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw IoError("cannot open " + images_path);
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw IoError("cannot open " + labels_path);

  if (read_u32_be(imgs, images_path) != 0x00000803u) {
    throw BadMagic(images_path);
  }
  const uint32_t n_images = read_u32_be(imgs, images_path);
  const uint32_t rows = read_u32_be(imgs, images_path);
  const uint32_t cols = read_u32_be(imgs, images_path);

  if (read_u32_be(labs, labels_path) != 0x00000801u) {
    throw BadMagic(labels_path);
  }
  const uint32_t n_labels = read_u32_be(labs, labels_path);
  if (n_images != n_labels) {
    throw CountMismatch(std::to_string(n_images) + " images vs " +
                        std::to_string(n_labels) + " labels");
  }

  const size_t pixel_count = size_t(n_images) * rows * cols;
  std::vector<unsigned char> pixels(pixel_count);
  imgs.read(reinterpret_cast<char*>(pixels.data()),
            static_cast<std::streamsize>(pixel_count));
  if (static_cast<size_t>(imgs.gcount()) != pixel_count) {
    throw Truncated(images_path);
  }
  std::vector<unsigned char> raw_labels(n_labels);
  labs.read(reinterpret_cast<char*>(raw_labels.data()), n_labels);
  if (static_cast<size_t>(labs.gcount()) != n_labels) {
    throw Truncated(labels_path);
  }

  Dataset d;
  std::vector<double> values(pixel_count);
  for (size_t i = 0; i < pixel_count; ++i) {
    values[i] = static_cast<double>(pixels[i]) / 255.0;
  }
  d.images = Tensor::from(
      {int64_t(n_images), int64_t(rows), int64_t(cols), 1}, std::move(values));
  d.labels.assign(raw_labels.begin(), raw_labels.end());
  int max_label = 0;
  for (int l : d.labels) max_label = std::max(max_label, l);
  d.num_classes = max_label + 1;
  return d;
}

namespace {

struct Point {
  double x, y;
};

void render_bump(double* img, int64_t h, int64_t w, int64_t c, double px,
                 double py, double sigma) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - px;
      const double dy = static_cast<double>(y) - py;
      const double v = std::exp(-(dx * dx + dy * dy) * inv);
      for (int64_t ch = 0; ch < c; ++ch) {
        double& cell = img[(y * w + x) * c + ch];
        cell = std::max(cell, v);
      }
    }
  }
}

}  // namespace

Dataset synth_dataset(const SynthSpec& spec, uint64_t seed) {
  if (spec.n < 1 || spec.height < 4 || spec.width < 4 || spec.channels < 1) {
    throw UnknownGenerator("bad synth dimensions");
  }
  const bool moons = spec.generator == "raster-moons";
  const bool blobs = spec.generator == "blob-k";
  if (!moons && !blobs) throw UnknownGenerator(spec.generator);
  const int classes = moons ? 2 : spec.classes;
  if (classes < 2) throw UnknownGenerator("need at least 2 classes");

  const int64_t h = spec.height, w = spec.width, c = spec.channels;
  const double side = static_cast<double>(std::min(h, w));
  const double cx = static_cast<double>(w - 1) / 2.0;
  const double cy = static_cast<double>(h - 1) / 2.0;
  // Geometry fits inside the central half of the canvas so center-crop
  // teachers still see the whole structure.
  const double unit = 0.125 * side;       // moon-space unit -> pixels
  const double sigma = 0.045 * side;      // bump width
  const double blob_radius = 0.28 * side;

  Rng rng = Rng(seed).stream("synth/" + spec.generator + "/" + spec.split);
  Dataset d;
  d.num_classes = classes;
  d.split = spec.split;
  d.labels.resize(static_cast<size_t>(spec.n));
  std::vector<double> values(static_cast<size_t>(spec.n * h * w * c), 0.0);

  for (int i = 0; i < spec.n; ++i) {
    const int label = i % classes;
    d.labels[static_cast<size_t>(i)] = label;
    double* img = values.data() + static_cast<int64_t>(i) * h * w * c;
    Point p{0.0, 0.0};
    if (moons) {
      const double t = rng.uniform(0.0, 3.14159265358979323846);
      if (label == 0) {
        p = {std::cos(t), std::sin(t)};
      } else {
        p = {1.0 - std::cos(t), 0.3 - std::sin(t)};
      }
      // center the union of the two arcs
      p.x -= 0.5;
      p.y -= 0.15;
    } else {
      const double angle =
          2.0 * 3.14159265358979323846 * static_cast<double>(label) /
          static_cast<double>(classes);
      p = {std::cos(angle) * blob_radius / unit,
           std::sin(angle) * blob_radius / unit};
    }
    p.x += spec.noise * rng.normal();
    p.y += spec.noise * rng.normal();
    render_bump(img, h, w, c, cx + p.x * unit, cy - p.y * unit, sigma);
  }
  d.images = Tensor::from({spec.n, h, w, c}, std::move(values));
  return d;
}

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
  const int64_t n = static_cast<int64_t>(labels.size());
  Tensor y = Tensor::zeros({n, num_classes});
  for (int64_t i = 0; i < n; ++i) {
    const int l = labels[static_cast<size_t>(i)];
    if (l < 0 || l >= num_classes) throw CountMismatch("label out of range");
    y.data()[i * num_classes + l] = 1.0;
  }
  return y;
}

std::vector<int> shuffled_indices(int64_t n, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = static_cast<int>(i);
  for (int64_t i = n - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, static_cast<int>(i));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  return idx;
}

Batch take_batch(const Dataset& d, const std::vector<int>& order,
                 int64_t begin, int64_t count) {
  if (begin < 0 || begin + count > static_cast<int64_t>(order.size())) {
    throw CountMismatch("batch window out of range");
  }
  const Shape s = d.sample_shape();
  const int64_t sample_size = s[0] * s[1] * s[2];
  Batch b;
  b.labels.resize(static_cast<size_t>(count));
  std::vector<double> values(static_cast<size_t>(count * sample_size));
  for (int64_t i = 0; i < count; ++i) {
    const int src = order[static_cast<size_t>(begin + i)];
    std::copy(d.images.data() + src * sample_size,
              d.images.data() + (src + 1) * sample_size,
              values.data() + i * sample_size);
    b.labels[static_cast<size_t>(i)] = d.labels[static_cast<size_t>(src)];
  }
  b.x = Tensor::from({count, s[0], s[1], s[2]}, std::move(values));
  b.y = one_hot(b.labels, d.num_classes);
  return b;
}

Dataset subset(const Dataset& d, int64_t begin, int64_t count) {
  if (begin < 0 || begin + count > d.n()) {
    throw CountMismatch("subset window out of range");
  }
  const Shape s = d.sample_shape();
  const int64_t sample_size = s[0] * s[1] * s[2];
  Dataset out;
  out.num_classes = d.num_classes;
  out.split = d.split;
  out.labels.assign(d.labels.begin() + begin, d.labels.begin() + begin + count);
  std::vector<double> values(d.images.data() + begin * sample_size,
                             d.images.data() + (begin + count) * sample_size);
  out.images = Tensor::from({count, s[0], s[1], s[2]}, std::move(values));
  return out;
}

Dataset transform_dataset(const Dataset& d, const InputTransform& t) {
  NoGradGuard ng;
  Dataset out;
  out.num_classes = d.num_classes;
  out.split = d.split;
  out.labels = d.labels;
  out.images = apply(t, d.images);
  return out;
}

}  // namespace igam
