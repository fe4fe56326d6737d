#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfdcam/cam.hpp"
#include "cfdcam/data.hpp"
#include "cfdcam/error.hpp"
#include "cfdcam/model.hpp"
#include "cfdcam/random.hpp"

namespace cfdcam {

struct TrainConfig {
  double initial_lr = 1e-4;
  double min_lr = 5e-6;
  double weight_decay = 1e-5;
  double temperature = 0.07;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int pretrain_epochs = 2;
  int finetune_epochs = 10;
  int batch_size = 16;
  int projection_dim = 32;
  std::uint64_t seed = 0;
  double accuracy_gate = 0.9;
  double min_gain = 0.9;
  double max_gain = 1.1;

  void validate() const {
    if (!(min_lr > 0.0) || !(min_lr <= initial_lr)) throw ValidationError("TrainConfig: need 0 < min_lr <= initial_lr");
    if (!(temperature > 0.0)) throw ValidationError("TrainConfig: temperature must be > 0");
    if (!(accuracy_gate > 0.0 && accuracy_gate < 1.0)) throw ValidationError("TrainConfig: gate must be in (0,1)");
    if (weight_decay < 0.0) throw ValidationError("TrainConfig: weight_decay must be >= 0");
    if (pretrain_epochs < 0 || finetune_epochs < 0) throw ValidationError("TrainConfig: negative epoch count");
    if (batch_size < 2) throw ValidationError("TrainConfig: batch_size must be >= 2");
    if (!(min_gain > 0.0) || !(min_gain <= max_gain)) throw ValidationError("TrainConfig: need 0 < min_gain <= max_gain");
    if (projection_dim < 1) throw ValidationError("TrainConfig: projection_dim must be >= 1");
  }
};

/// Rows of unit-norm embeddings with their class labels.
struct EmbeddingBatch {
  std::vector<std::vector<double>> embeddings;
  std::vector<int> labels;

  void validate() const {
    if (embeddings.size() < 2) throw ValidationError("EmbeddingBatch: need at least 2 rows");
    if (labels.size() != embeddings.size()) throw ValidationError("EmbeddingBatch: label count mismatch");
    const std::size_t d = embeddings.front().size();
    for (const auto& z : embeddings) {
      if (z.size() != d) throw ValidationError("EmbeddingBatch: ragged rows");
      double n = 0.0;
      for (double v : z) n += v * v;
      if (std::abs(std::sqrt(n) - 1.0) > 1e-6) throw ValidationError("EmbeddingBatch: rows must be unit-norm");
    }
  }
};

struct SupConResult {
  double loss = 0.0;
  std::vector<std::vector<double>> grad;  // dL/d(embedding row)
};

/// Supervised contrastive loss, averaged over anchors, with its gradient
/// with respect to the (already normalized) embeddings.
inline SupConResult supcon_loss_and_grad(const EmbeddingBatch& batch, double temperature) {
  batch.validate();
  if (!(temperature > 0.0)) throw ValidationError("supcon_loss: temperature must be > 0");
  const std::size_t n = batch.embeddings.size(), d = batch.embeddings.front().size();
  const auto& z = batch.embeddings;
  std::vector<double> sim(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += z[i][k] * z[j][k];
      sim[i * n + j] = s / temperature;
    }

  SupConResult r;
  r.grad.assign(n, std::vector<double>(d, 0.0));
  std::vector<double> coeff(n * n, 0.0);  // dL_i/dsim_ij
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t positives = 0;
    for (std::size_t j = 0; j < n; ++j) positives += (j != i && batch.labels[j] == batch.labels[i]);
    if (positives == 0) throw ContractError("supcon_loss: anchor " + std::to_string(i) + " has no positive");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) mx = std::max(mx, sim[i * n + a]);
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) denom += std::exp(sim[i * n + a] - mx);
    const double log_denom = mx + std::log(denom);
    double li = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const bool pos = batch.labels[j] == batch.labels[i];
      if (pos) li -= (sim[i * n + j] - log_denom);
      coeff[i * n + j] = std::exp(sim[i * n + j] - log_denom) - (pos ? 1.0 / positives : 0.0);
    }
    r.loss += li / static_cast<double>(positives);
  }
  r.loss /= static_cast<double>(n);
  const double scale = 1.0 / (static_cast<double>(n) * temperature);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double c = coeff[i * n + j] * scale;
      if (c == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) {
        r.grad[i][k] += c * z[j][k];
        r.grad[j][k] += c * z[i][k];
      }
    }
  return r;
}

inline double supcon_loss(const EmbeddingBatch& batch, double temperature) {
  return supcon_loss_and_grad(batch, temperature).loss;
}

/// min_lr + ½(initial_lr − min_lr)(1 + cos(π·step/total_steps)).
inline double cosine_lr(long step, long total_steps, double initial_lr, double min_lr) {
  if (total_steps < 0 || step < 0 || step > total_steps) throw ValidationError("cosine_lr: step out of range");
  if (step == 0) return initial_lr;
  if (step == total_steps) return min_lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return min_lr + 0.5 * (initial_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(std::vector<nn::Param*> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const nn::Param* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void step(const ParamGrads& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      nn::Param& p = *params_[i];
      if (!p.trainable) continue;
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = grads[i][j] + cfg_.weight_decay * p.value[j];
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
        p.value[j] -= lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + cfg_.adam_eps);
      }
    }
  }

 private:
  std::vector<nn::Param*> params_;
  TrainConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// One line of a training curve. `accuracy` is NaN when not measured.
struct LogEntry {
  long step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Random translation (zero-padded, ±4 px), horizontal flip and intensity jitter.
inline ImageTensor augment(const ImageTensor& img, Rng& rng, double min_gain = 0.9, double max_gain = 1.1) {
  const int shift = 4;
  const int dy = static_cast<int>(rng.below(2 * shift + 1)) - shift;
  const int dx = static_cast<int>(rng.below(2 * shift + 1)) - shift;
  const bool flip = rng.uniform() < 0.5;
  const double gain = rng.uniform(min_gain, max_gain), bias = rng.uniform(-0.05, 0.05);
  ImageTensor out(img.channels(), img.height(), img.width(), 0.0);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        const int sy = y + dy;
        int sx = x + dx;
        if (flip) sx = img.width() - 1 - sx;
        const double v = (sy >= 0 && sy < img.height() && sx >= 0 && sx < img.width()) ? img(c, sy, sx) : 0.0;
        out(c, y, x) = v * gain + bias;
      }
  return out;
}

/// Fraction of records whose argmax prediction equals the label.
inline double evaluate_accuracy(const Classifier& model, std::span<const SliceRecord> records) {
  if (records.empty()) throw ValidationError("evaluate_accuracy: empty dataset");
  std::vector<int> correct(records.size(), 0);
  parallel_for(records.size(), [&](std::size_t i) {
    correct[i] = model.forward(records[i].image).argmax() == records[i].label;
  });
  std::size_t hits = 0;
  for (int c : correct) hits += static_cast<std::size_t>(c);
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  return idx;
}

inline long steps_per_epoch(std::size_t n, int batch) {
  return static_cast<long>((n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
}

inline void check_finite_loss(double loss, long step) {
  if (!std::isfinite(loss)) throw DivergenceError("non-finite loss at step " + std::to_string(step));
}

}  // namespace detail

struct PretrainResult {
  std::vector<LogEntry> log;
  double initial_loss = 0.0;  // mean loss over the first epoch's batches before their update
  double final_loss = 0.0;
};

/// SupCon pretraining of the feature stages through a linear projection head
/// (discarded afterwards). Two augmented views per sample; labels only.
inline PretrainResult pretrain_supcon(Classifier& model, std::span<const SliceRecord> records,
                                      const TrainConfig& cfg) {
  cfg.validate();
  PretrainResult result;
  if (cfg.pretrain_epochs == 0 || records.empty()) return result;
  Rng rng(cfg.seed ^ 0x5c0a7e11ULL);
  nn::Linear proj("projection", model.feature_dim(), cfg.projection_dim);
  detail::init_linear(proj, rng);

  // Optimizer over body stages (not the class head) plus the projection.
  auto all = model.params();
  const std::size_t body_count = all.size() - 2;
  std::vector<nn::Param*> trained(all.begin(), all.begin() + static_cast<long>(body_count));
  for (nn::Param* p : proj.params()) trained.push_back(p);
  Adam opt(trained, cfg);

  model.set_mode(Mode::training);
  const long per_epoch = detail::steps_per_epoch(records.size(), cfg.batch_size);
  const long total = per_epoch * cfg.pretrain_epochs;
  long step = 0;
  double first_epoch_sum = 0.0;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    const auto order = detail::shuffled_indices(records.size(), rng);
    for (long b = 0; b < per_epoch; ++b, ++step) {
      const std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t hi = std::min(records.size(), lo + cfg.batch_size);
      std::vector<Classifier::Trace> traces;
      std::vector<std::vector<double>> raw;
      EmbeddingBatch batch;
      for (std::size_t i = lo; i < hi; ++i)
        for (int view = 0; view < 2; ++view) {
          const auto& rec = records[order[i]];
          traces.push_back(model.trace(augment(rec.image, rng, cfg.min_gain, cfg.max_gain)));
          raw.push_back(proj.forward(traces.back().features));
          double norm = 0.0;
          for (double v : raw.back()) norm += v * v;
          norm = std::max(std::sqrt(norm), 1e-12);
          std::vector<double> zn(raw.back());
          for (double& v : zn) v /= norm;
          batch.embeddings.push_back(std::move(zn));
          batch.labels.push_back(rec.label);
        }
      const auto res = supcon_loss_and_grad(batch, cfg.temperature);
      detail::check_finite_loss(res.loss, step);
      if (epoch == 0) first_epoch_sum += res.loss;

      ParamGrads body_grads = model.zero_grads();
      ParamGrads proj_grads = {std::vector<double>(proj.weight().value.size(), 0.0),
                               std::vector<double>(proj.bias().value.size(), 0.0)};
      for (std::size_t r = 0; r < traces.size(); ++r) {
        const auto& zn = batch.embeddings[r];
        const auto& g = res.grad[r];
        double norm = 0.0;
        for (double v : raw[r]) norm += v * v;
        norm = std::max(std::sqrt(norm), 1e-12);
        double dot = 0.0;
        for (std::size_t k = 0; k < g.size(); ++k) dot += g[k] * zn[k];
        std::vector<double> graw(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) graw[k] = (g[k] - zn[k] * dot) / norm;
        const auto gfeat = proj.backward(traces[r].features, graw, proj_grads);
        model.backward_features(traces[r], gfeat, body_grads);
      }
      ParamGrads grads(body_grads.begin(), body_grads.begin() + static_cast<long>(body_count));
      grads.push_back(std::move(proj_grads[0]));
      grads.push_back(std::move(proj_grads[1]));
      const double lr = cosine_lr(step, std::max(total - 1, 0L), cfg.initial_lr, cfg.min_lr);
      opt.step(grads, lr);
      result.log.push_back({step, lr, res.loss});
      result.final_loss = res.loss;
    }
  }
  result.initial_loss = first_epoch_sum / static_cast<double>(per_epoch);
  model.set_mode(Mode::inference);
  return result;
}

struct FinetuneResult {
  std::vector<LogEntry> log;
  double test_accuracy = 0.0;
  bool gate_passed = false;
};

/// Cross-entropy training of the whole classifier with Adam, cosine-annealed
/// per step from initial_lr (first step) to min_lr (last step).
inline FinetuneResult finetune_classifier(Classifier& model, std::span<const SliceRecord> train,
                                          std::span<const SliceRecord> test, const TrainConfig& cfg) {
  cfg.validate();
  FinetuneResult result;
  Rng rng(cfg.seed ^ 0xf17e7a11ULL);
  if (cfg.finetune_epochs > 0 && !train.empty()) {
    Adam opt(model.params(), cfg);
    model.set_mode(Mode::training);
    const long per_epoch = detail::steps_per_epoch(train.size(), cfg.batch_size);
    const long total = per_epoch * cfg.finetune_epochs;
    long step = 0;
    for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
      const auto order = detail::shuffled_indices(train.size(), rng);
      for (long b = 0; b < per_epoch; ++b, ++step) {
        const std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
        const std::size_t hi = std::min(train.size(), lo + cfg.batch_size);
        const double inv = 1.0 / static_cast<double>(hi - lo);
        ParamGrads grads = model.zero_grads();
        double loss = 0.0;
        std::size_t hits = 0;
        for (std::size_t i = lo; i < hi; ++i) {
          const auto& rec = train[order[i]];
          const auto t = model.trace(augment(rec.image, rng, cfg.min_gain, cfg.max_gain));
          auto p = softmax(std::span<const double>(t.logits));
          loss -= std::log(std::max(p[rec.label], 1e-300)) * inv;
          hits += static_cast<std::size_t>(
              std::max_element(t.logits.begin(), t.logits.end()) - t.logits.begin() == rec.label);
          for (std::size_t k = 0; k < p.size(); ++k) p[k] = (p[k] - (static_cast<int>(k) == rec.label)) * inv;
          model.backward_params(t, p, grads);
        }
        detail::check_finite_loss(loss, step);
        const double lr = cosine_lr(step, std::max(total - 1, 0L), cfg.initial_lr, cfg.min_lr);
        opt.step(grads, lr);
        result.log.push_back({step, lr, loss, static_cast<double>(hits) * inv});
      }
    }
    model.set_mode(Mode::inference);
  }
  if (!test.empty()) result.test_accuracy = evaluate_accuracy(model, test);
  result.gate_passed = result.test_accuracy > cfg.accuracy_gate;
  return result;
}

}  // namespace cfdcam
