#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cfdcam/cfdcam.hpp"

namespace cfdcam::test {

/// Smooth deterministic 1×64×64 probe: a low-frequency wave plus one bright blob.
inline ImageTensor probe_image(int size = 64) {
  ImageTensor img(1, size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double wave = 0.25 + 0.15 * std::sin(0.21 * x) * std::cos(0.13 * y);
      const double dy = y - 0.625 * size, dx = x - 0.375 * size;
      img(0, y, x) = wave + 0.6 * std::exp(-(dy * dy + dx * dx) / (2.0 * 36.0));
    }
  return img;
}

inline ImageTensor random_image(Rng& rng, int c, int h, int w, double lo = 0.0, double hi = 1.0) {
  ImageTensor img(c, h, w);
  for (double& v : img.values()) v = rng.uniform(lo, hi);
  return img;
}

inline Grid random_grid(Rng& rng, int h, int w, double lo = -1.0, double hi = 1.0) {
  Grid g(h, w);
  for (double& v : g.values()) v = rng.uniform(lo, hi);
  return g;
}

inline BinaryMask random_mask(Rng& rng, int h, int w, double p) {
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < m.size(); ++i) m.set_at(i, rng.uniform() < p);
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

#ifdef CFDCAM_GOLDEN_DIR
inline const nlohmann::json& golden() {
  static const nlohmann::json j = [] {
    std::ifstream in(std::filesystem::path(CFDCAM_GOLDEN_DIR) / "reference_seed7.json");
    return nlohmann::json::parse(in);
  }();
  return j;
}
#endif

/// Values on the sub-grid the golden maps are stored on.
inline std::vector<double> subgrid(const std::vector<double>& map, int width = 64) {
  std::vector<double> out;
  for (int y = 1; y < width; y += 4)
    for (int x = 2; x < width; x += 4) out.push_back(map[static_cast<std::size_t>(y) * width + x]);
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("cfdcam_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Synthetic dataset used by the command-line tests.
inline SynthSpec cli_synth_spec() {
  SynthSpec s;
  s.n_cases = 20;
  s.seed = 3;
  return s;
}

struct AccuracyFixture {
  Classifier model;
  std::vector<SliceRecord> eval;
};

/// Reference network fine-tuned for two short epochs on a 20-case synthetic
/// set; evaluated on every slice of that set.
inline AccuracyFixture accuracy_fixture() {
  SynthSpec spec;
  spec.n_cases = 20;
  spec.seed = 11;
  const auto cases = synth_blob_dataset(spec);
  std::vector<std::string> ids;
  for (const auto& c : cases) ids.push_back(c.case_id);
  const auto split = split_cases(ids, SplitSpec{});
  std::vector<SliceRecord> train, all;
  for (const auto& c : cases) {
    const bool is_train = std::find(split.train.begin(), split.train.end(), c.case_id) != split.train.end();
    for (auto& r : slice_volume(c, Modality::FLAIR).slices) {
      if (is_train) train.push_back(r);
      all.push_back(std::move(r));
    }
  }
  TrainConfig tc;
  tc.pretrain_epochs = 0;
  tc.finetune_epochs = 2;
  tc.initial_lr = 3e-3;
  Classifier model = reference_network(7);
  finetune_classifier(model, train, {}, tc);
  return {std::move(model), std::move(all)};
}

// ---------------------------------------------------------------------------
// Unoptimized per-channel CAM oracles: one unbatched forward per channel,
// plain loops for masking, resampling and aggregation.

namespace oracle {

inline double bilinear_at(const Grid& g, int H, int W, int y, int x) {
  auto coord = [](int d, int in, int out) {
    double s = (d + 0.5) * static_cast<double>(in) / out - 0.5;
    if (s < 0) s = 0;
    if (s > in - 1) s = in - 1;
    return s;
  };
  const double sy = coord(y, g.height(), H), sx = coord(x, g.width(), W);
  const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  const int y1 = std::min(y0 + 1, g.height() - 1), x1 = std::min(x0 + 1, g.width() - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * g(y0, x0) + fx * g(y0, x1)) + fy * ((1 - fx) * g(y1, x0) + fx * g(y1, x1));
}

inline Grid upsample(const Grid& g, int H, int W) {
  Grid out(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) out(y, x) = bilinear_at(g, H, W, y, x);
  return out;
}

inline Grid normalize(const Grid& g) {
  double lo = g.values()[0], hi = g.values()[0];
  for (double v : g.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Grid out(g.height(), g.width(), 0.0);
  if (hi > lo)
    for (std::size_t i = 0; i < g.size(); ++i) out.values()[i] = (g.values()[i] - lo) / (hi - lo);
  return out;
}

inline Grid channel(const Tensor& t, int k) {
  Grid g(t.height(), t.width());
  for (int y = 0; y < t.height(); ++y)
    for (int x = 0; x < t.width(); ++x) g(y, x) = t(k, y, x);
  return g;
}

inline Grid finish(const Tensor& acts, const std::vector<double>& w, int H, int W) {
  Grid s(acts.height(), acts.width(), 0.0);
  for (int y = 0; y < acts.height(); ++y)
    for (int x = 0; x < acts.width(); ++x) {
      double v = 0.0;
      for (int k = 0; k < acts.channels(); ++k) v += w[k] * acts(k, y, x);
      s(y, x) = v > 0 ? v : 0.0;
    }
  return normalize(upsample(s, H, W));
}

inline std::vector<double> masked_class_logits(const Classifier& m, const ImageTensor& img, const Tensor& acts, int cls,
                                               bool probability) {
  std::vector<double> out;
  for (int k = 0; k < acts.channels(); ++k) {
    const Grid h = normalize(upsample(channel(acts, k), img.height(), img.width()));
    ImageTensor masked = img;
    for (int c = 0; c < img.channels(); ++c)
      for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) masked(c, y, x) = img(c, y, x) * h(y, x);
    const auto z = m.forward(masked).scores;
    if (probability) {
      double s = 0.0;
      for (double v : z) s += std::exp(v);
      out.push_back(std::exp(z[cls]) / s);
    } else {
      out.push_back(z[cls]);
    }
  }
  return out;
}

inline Grid grad_cam(const Classifier& m, const ImageTensor& img, int cls, const std::string& layer) {
  const Tensor a = activations(m, img, layer).maps;
  const Tensor g = grad_class_wrt_layer(m, img, cls, layer).grads;
  std::vector<double> w(a.channels(), 0.0);
  for (int k = 0; k < a.channels(); ++k) {
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) w[k] += g(k, y, x);
    w[k] /= a.height() * a.width();
  }
  return finish(a, w, img.height(), img.width());
}

inline Grid score_cam(const Classifier& m, const ImageTensor& img, int cls, const std::string& layer) {
  const Tensor a = activations(m, img, layer).maps;
  const double base = m.forward(ImageTensor(img.channels(), img.height(), img.width(), 0.0))[cls];
  auto s = masked_class_logits(m, img, a, cls, false);
  double sum = 0.0;
  for (double& v : s) sum += (v = std::exp(v - base));
  for (double& v : s) v /= sum;
  return finish(a, s, img.height(), img.width());
}

inline Grid cfd_cam(const Classifier& m, const ImageTensor& img, int cls, const std::string& layer, bool confidence) {
  const Tensor a = activations(m, img, layer).maps;
  return finish(a, masked_class_logits(m, img, a, cls, confidence), img.height(), img.width());
}

inline Grid layer_cam(const Classifier& m, const ImageTensor& img, int cls, const std::vector<std::string>& layers) {
  Grid fused(img.height(), img.width(), -1.0);
  for (const auto& layer : layers) {
    const Tensor a = activations(m, img, layer).maps;
    const Tensor g = grad_class_wrt_layer(m, img, cls, layer).grads;
    Grid s(a.height(), a.width(), 0.0);
    for (int k = 0; k < a.channels(); ++k)
      for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) s(y, x) += (g(k, y, x) > 0 ? g(k, y, x) : 0.0) * a(k, y, x);
    const Grid n = normalize(upsample(s, img.height(), img.width()));
    for (std::size_t i = 0; i < n.size(); ++i) fused.values()[i] = std::max(fused.values()[i], n.values()[i]);
  }
  return normalize(fused);
}

/// Direct nested-loop SupCon loss.
inline double supcon_loss(const EmbeddingBatch& e, double tau) {
  const std::size_t n = e.embeddings.size();
  auto dot = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < e.embeddings[i].size(); ++k) s += e.embeddings[i][k] * e.embeddings[j][k];
    return s;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) denom += std::exp(dot(i, a) / tau);
    double li = 0.0;
    int np = 0;
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && e.labels[p] == e.labels[i]) {
        li -= std::log(std::exp(dot(i, p) / tau) / denom);
        ++np;
      }
    total += li / np;
  }
  return total / static_cast<double>(n);
}

/// Unit-norm random embeddings; every label appears at least twice.
inline EmbeddingBatch random_embedding_batch(Rng& rng, int b, int d) {
  EmbeddingBatch e;
  for (int i = 0; i < b; ++i) {
    std::vector<double> v(d);
    double n = 0.0;
    for (double& x : v) x = rng.normal(), n += x * x;
    for (double& x : v) x /= std::sqrt(n);
    e.embeddings.push_back(std::move(v));
    e.labels.push_back(i < 2 ? 0 : (i < 4 ? 1 : static_cast<int>(rng.below(3))));
  }
  for (int& l : e.labels)
    if (std::count(e.labels.begin(), e.labels.end(), l) < 2) l = 0;
  return e;
}

}  // namespace oracle

}  // namespace cfdcam::test
