#include "igam/metrics.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "igam/io.hpp"
#include "igam/kernels.hpp"

namespace igam {

namespace {

constexpr int64_t kEvalBatch = 64;

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const std::vector<int> pred = argmax_rows(logits);
  int correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == labels[i]) ++correct;
  }
  return correct;
}

}  // namespace

int eval_thread_count(int requested) {
  int threads = requested > 0
                    ? requested
                    : static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("IGAM_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) threads = std::min(threads, cap);
  }
  return std::max(threads, 1);
}

double clean_accuracy(const TargetModel& model, const Dataset& test) {
  NoGradGuard ng;
  int correct = 0;
  for (int64_t begin = 0; begin < test.n(); begin += kEvalBatch) {
    const int64_t count = std::min(kEvalBatch, test.n() - begin);
    Dataset part = subset(test, begin, count);
    correct += count_correct(model.logits(part.images), part.labels);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.n());
}

EvalRow evaluate(const TargetModel& model, const std::string& name,
                 const Dataset& test,
                 const std::vector<std::pair<std::string, AttackConfig>>& atks,
                 uint64_t attack_seed, int threads) {
  const int64_t num_batches = (test.n() + kEvalBatch - 1) / kEvalBatch;
  // counts[batch] = {clean, attack0, attack1, ...}
  std::vector<std::vector<int>> counts(
      static_cast<size_t>(num_batches),
      std::vector<int>(atks.size() + 1, 0));

  auto run_batch = [&](int64_t bi) {
    const int64_t begin = bi * kEvalBatch;
    const int64_t count = std::min(kEvalBatch, test.n() - begin);
    Dataset part = subset(test, begin, count);
    {
      NoGradGuard ng;
      counts[static_cast<size_t>(bi)][0] =
          count_correct(model.logits(part.images), part.labels);
    }
    const Tensor y = one_hot(part.labels, test.num_classes);
    for (size_t a = 0; a < atks.size(); ++a) {
      const auto& [label, cfg] = atks[a];
      Rng rng = Rng(attack_seed).stream("attack/" + label + "/batch" +
                                        std::to_string(bi));
      Tensor x_adv =
          cfg.epsilon > 0.0 ? pgd(model, part.images, y, cfg, &rng) : part.images;
      NoGradGuard ng;
      counts[static_cast<size_t>(bi)][a + 1] =
          count_correct(model.logits(x_adv), part.labels);
    }
  };

  const int nthreads =
      std::min<int64_t>(eval_thread_count(threads), num_batches);
  if (nthreads <= 1) {
    for (int64_t bi = 0; bi < num_batches; ++bi) run_batch(bi);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) {
      pool.emplace_back([&, t]() {
        for (int64_t bi = t; bi < num_batches; bi += nthreads) run_batch(bi);
      });
    }
    for (std::thread& t : pool) t.join();
  }

  EvalRow row;
  row.model = name;
  std::vector<int64_t> totals(atks.size() + 1, 0);
  for (const auto& c : counts) {
    for (size_t i = 0; i < c.size(); ++i) totals[i] += c[i];
  }
  const double denom = static_cast<double>(test.n());
  row.clean = 100.0 * static_cast<double>(totals[0]) / denom;
  for (size_t a = 0; a < atks.size(); ++a) {
    row.attacks.emplace_back(
        atks[a].first, 100.0 * static_cast<double>(totals[a + 1]) / denom);
  }
  return row;
}

double alignment(const TargetModel& model, const Tensor& x_single) {
  Tensor x = x_single;
  if (x.rank() == 3) {
    x = x.reshaped_view({1, x.dim(0), x.dim(1), x.dim(2)});
  }
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw ShapeMismatch("alignment expects one sample");
  }
  Tensor xx = x.detach();
  xx.set_requires_grad(true);
  Tensor z = model.logits(xx);
  const int64_t k = z.dim(1);
  if (k < 2) throw ShapeMismatch("alignment needs >= 2 logits");
  int top1 = 0, top2 = -1;
  for (int64_t j = 1; j < k; ++j) {
    if (z.data()[j] > z.data()[top1]) top1 = static_cast<int>(j);
  }
  for (int64_t j = 0; j < k; ++j) {
    if (static_cast<int>(j) == top1) continue;
    if (top2 < 0 || z.data()[j] > z.data()[top2]) top2 = static_cast<int>(j);
  }
  Tensor margin =
      reshape(sub(slice(z, {0, top1}, {1, 1}), slice(z, {0, top2}, {1, 1})),
              {1});
  Tensor g = grad(margin, {xx}, false)[0];
  const double gnorm = norm2_values(g);
  if (gnorm < 1e-12) throw ZeroGradient("alignment");
  return std::fabs(dot_values(x, g)) / gnorm;
}

double mean_alignment(const TargetModel& model, const Dataset& data,
                      int max_samples) {
  const int64_t n = std::min<int64_t>(max_samples, data.n());
  double total = 0.0;
  int64_t used = 0;
  for (int64_t i = 0; i < n; ++i) {
    Dataset one = subset(data, i, 1);
    try {
      total += alignment(model, one.images);
      ++used;
    } catch (const ZeroGradient&) {
      // degenerate sample, skipped
    }
  }
  if (used == 0) throw ZeroGradient("mean_alignment: no usable samples");
  return total / static_cast<double>(used);
}

double mean_sample_cosine(const Tensor& ja, const Tensor& jb) {
  if (ja.shape() != jb.shape()) throw ShapeMismatch("mean_sample_cosine");
  const int64_t n = ja.dim(0);
  const int64_t d = ja.size() / n;
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* a = ja.data() + i * d;
    const double* b = jb.data() + i * d;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      dot += a[j] * b[j];
      na += a[j] * a[j];
      nb += b[j] * b[j];
    }
    const double denom = std::sqrt(na) * std::sqrt(nb);
    total += denom > 0.0 ? dot / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

double mean_gradient_cosine(const TargetModel& a, const TargetModel& b,
                            const Dataset& data, int max_samples) {
  const int64_t n = std::min<int64_t>(max_samples, data.n());
  Dataset part = subset(data, 0, n);
  Tensor y = one_hot(part.labels, data.num_classes);
  Tensor ja = input_gradient(a, part.images, y, false);
  Tensor jb = input_gradient(b, part.images, y, false);
  return mean_sample_cosine(ja, jb);
}

std::vector<std::string> export_input_gradients(const TargetModel& model,
                                                const Dataset& data, int count,
                                                const std::string& out_dir,
                                                const std::string& model_name) {
  const int64_t n = std::min<int64_t>(count, data.n());
  const Shape s = data.sample_shape();
  if (s[2] != 1 && s[2] != 3) {
    throw IoError("saliency export supports 1 or 3 channels");
  }
  ensure_directory(out_dir);
  Dataset part = subset(data, 0, n);
  Tensor y = one_hot(part.labels, data.num_classes);
  Tensor j = input_gradient(model, part.images, y, false);
  const int64_t d = s[0] * s[1] * s[2];
  std::vector<std::string> paths;
  for (int64_t i = 0; i < n; ++i) {
    const double* src = j.data() + i * d;
    double lo = src[0], hi = src[0];
    for (int64_t p = 1; p < d; ++p) {
      lo = std::min(lo, src[p]);
      hi = std::max(hi, src[p]);
    }
    std::vector<uint8_t> bytes(static_cast<size_t>(d));
    if (hi - lo <= 0.0) {
      // constant J: the normalization is degenerate, render mid-gray
      std::fill(bytes.begin(), bytes.end(),
                static_cast<uint8_t>(std::lround(0.5 * 255.0)));
    } else {
      const double inv = 1.0 / (hi - lo);
      for (int64_t p = 0; p < d; ++p) {
        bytes[static_cast<size_t>(p)] =
            static_cast<uint8_t>(std::lround(255.0 * (src[p] - lo) * inv));
      }
    }
    const std::string path = out_dir + "/" + model_name + "_" +
                             std::to_string(i) + (s[2] == 1 ? ".pgm" : ".ppm");
    if (s[2] == 1) {
      write_pgm(path, s[0], s[1], bytes);
    } else {
      write_ppm(path, s[0], s[1], bytes);
    }
    paths.push_back(path);
  }
  return paths;
}

void loss_landscape_grid(const TargetModel& model, const Tensor& x,
                         const Tensor& y_onehot, const Tensor& adv_dir,
                         const Tensor& rand_dir, double extent, int resolution,
                         const std::string& csv_path) {
  if (resolution < 1) throw ConfigError("landscape resolution must be >= 1");
  if (adv_dir.shape() != x.shape() || rand_dir.shape() != x.shape()) {
    throw ShapeMismatch("landscape directions must match x");
  }
  NoGradGuard ng;
  std::ostringstream csv;
  csv << "a,b,loss,class\n";
  auto coord = [&](int i) {
    if (resolution == 1) return 0.0;
    return -extent + 2.0 * extent * static_cast<double>(i) /
                         static_cast<double>(resolution - 1);
  };
  for (int ai = 0; ai < resolution; ++ai) {
    const double a = coord(ai);
    for (int bi = 0; bi < resolution; ++bi) {
      const double b = coord(bi);
      Tensor point = x.detach();
      kernels::active().axpy(point.data(), a, adv_dir.data(), point.size());
      kernels::active().axpy(point.data(), b, rand_dir.data(), point.size());
      Tensor logits = model.logits(point);
      const double loss = xent_logits(logits, y_onehot).item();
      const int cls = argmax_rows(logits)[0];
      csv << fmt_double(a) << "," << fmt_double(b) << "," << fmt_double(loss)
          << "," << cls << "\n";
    }
  }
  write_text_file(csv_path, csv.str());
}

double gradient_smoothness(const TargetModel& model, const Dataset& data,
                           int max_samples) {
  const int64_t n = std::min<int64_t>(max_samples, data.n());
  Dataset part = subset(data, 0, n);
  Tensor y = one_hot(part.labels, data.num_classes);
  Tensor j = input_gradient(model, part.images, y, false);
  const Shape s = data.sample_shape();
  const int64_t h = s[0], w = s[1], c = s[2];
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* img = j.data() + i * h * w * c;
    double mean_v = 0.0;
    for (int64_t p = 0; p < h * w; ++p) mean_v += img[p * c];
    mean_v /= static_cast<double>(h * w);
    double var = 0.0;
    for (int64_t p = 0; p < h * w; ++p) {
      const double d = img[p * c] - mean_v;
      var += d * d;
    }
    var /= static_cast<double>(h * w);
    if (var <= 0.0) continue;
    double cov = 0.0;
    int64_t pairs = 0;
    for (int64_t yy = 0; yy < h; ++yy) {
      for (int64_t xx = 0; xx + 1 < w; ++xx) {
        cov += (img[(yy * w + xx) * c] - mean_v) *
               (img[(yy * w + xx + 1) * c] - mean_v);
        ++pairs;
      }
    }
    for (int64_t yy = 0; yy + 1 < h; ++yy) {
      for (int64_t xx = 0; xx < w; ++xx) {
        cov += (img[(yy * w + xx) * c] - mean_v) *
               (img[((yy + 1) * w + xx) * c] - mean_v);
        ++pairs;
      }
    }
    total += cov / (static_cast<double>(pairs) * var);
  }
  return total / static_cast<double>(n);
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "model,clean";
  for (const std::string& label : attack_labels) os << "," << label;
  os << ",cos_sim,alignment\n";
  for (const EvalRow& row : rows) {
    os << row.model << "," << fmt_double(row.clean);
    for (const std::string& label : attack_labels) {
      double v = 0.0;
      for (const auto& [l, acc] : row.attacks) {
        if (l == label) v = acc;
      }
      os << "," << fmt_double(v);
    }
    os << "," << fmt_double(row.mean_cos_sim) << ","
       << fmt_double(row.mean_alignment) << "\n";
  }
  return os.str();
}

EvalReport EvalReport::from_csv(const std::string& text) {
  EvalReport report;
  std::vector<std::string> lines = split(text, '\n');
  if (lines.empty()) throw IoError("empty report csv");
  std::vector<std::string> header = split(trim(lines[0]), ',');
  if (header.size() < 4 || header[0] != "model" || header[1] != "clean" ||
      header[header.size() - 2] != "cos_sim" ||
      header.back() != "alignment") {
    throw IoError("unexpected report header");
  }
  for (size_t i = 2; i + 2 < header.size(); ++i) {
    report.attack_labels.push_back(header[i]);
  }
  for (size_t li = 1; li < lines.size(); ++li) {
    const std::string line = trim(lines[li]);
    if (line.empty()) continue;
    std::vector<std::string> cells = split(line, ',');
    if (cells.size() != header.size()) throw IoError("ragged report row");
    EvalRow row;
    row.model = cells[0];
    row.clean = parse_double(cells[1]);
    for (size_t a = 0; a < report.attack_labels.size(); ++a) {
      row.attacks.emplace_back(report.attack_labels[a],
                               parse_double(cells[2 + a]));
    }
    row.mean_cos_sim = parse_double(cells[cells.size() - 2]);
    row.mean_alignment = parse_double(cells.back());
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace igam
