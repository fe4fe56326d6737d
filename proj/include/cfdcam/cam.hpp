#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfdcam/error.hpp"
#include "cfdcam/model.hpp"
#include "cfdcam/parallel.hpp"
#include "cfdcam/tensor.hpp"

namespace cfdcam {

/// An H×W map with every value in [0, 1].
class SaliencyMap {
 public:
  SaliencyMap() = default;

  /// Wraps a grid that is already in [0, 1]; throws otherwise.
  static SaliencyMap from_unit_grid(Grid g) {
    for (double v : g.values())
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("SaliencyMap: value outside [0,1]");
    SaliencyMap m;
    m.data_ = std::move(g);
    return m;
  }

  const Grid& grid() const { return data_; }
  int height() const { return data_.height(); }
  int width() const { return data_.width(); }
  double operator()(int y, int x) const { return data_(y, x); }
  const std::vector<double>& values() const { return data_.values(); }

  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

 private:
  Grid data_;
};

enum class CamMethod { gradcam, scorecam, layercam, cfdcam };
enum class Weighting { confidence, logits };
enum class WeightingKind { gradient_gap, score_softmax, confidence, logit };

inline std::string to_string(CamMethod m) {
  switch (m) {
    case CamMethod::gradcam: return "gradcam";
    case CamMethod::scorecam: return "scorecam";
    case CamMethod::layercam: return "layercam";
    case CamMethod::cfdcam: return "cfdcam";
  }
  return "?";
}

inline std::string display_name(CamMethod m) {
  switch (m) {
    case CamMethod::gradcam: return "Grad-CAM";
    case CamMethod::scorecam: return "ScoreCAM";
    case CamMethod::layercam: return "LayerCAM";
    case CamMethod::cfdcam: return "Cfd-CAM";
  }
  return "?";
}

inline CamMethod parse_method(const std::string& s) {
  if (s == "gradcam") return CamMethod::gradcam;
  if (s == "scorecam") return CamMethod::scorecam;
  if (s == "layercam") return CamMethod::layercam;
  if (s == "cfdcam") return CamMethod::cfdcam;
  throw ValidationError("unknown CAM method '" + s + "'");
}

inline std::string to_string(Weighting w) { return w == Weighting::confidence ? "confidence" : "logits"; }

inline Weighting parse_weighting(const std::string& s) {
  if (s == "confidence") return Weighting::confidence;
  if (s == "logits") return Weighting::logits;
  throw ValidationError("unknown weighting '" + s + "'");
}

struct ChannelWeights {
  std::vector<double> weights;
  WeightingKind kind;
};

// ---------------------------------------------------------------------------
// Map primitives

/// (x - min) / (max - min); a constant map becomes all zeros.
inline SaliencyMap min_max_normalize(const Grid& map) {
  require_finite(map, "min_max_normalize");
  Grid out(map.height(), map.width(), 0.0);
  if (map.size() == 0) return SaliencyMap::from_unit_grid(std::move(out));
  const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi > lo) {
    const double range = hi - lo;
    for (std::size_t i = 0; i < map.size(); ++i)
      out.values()[i] = std::clamp((map.values()[i] - lo) / range, 0.0, 1.0);
  }
  return SaliencyMap::from_unit_grid(std::move(out));
}

namespace detail {

struct Tap {
  int i0, i1;
  double frac;  // weight of i1
};

// Half-pixel-center source coordinate for each destination index, edge-clamped.
inline std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int d = 0; d < out; ++d) {
    double src = (d + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - i0};
  }
  return taps;
}

inline void resample_plane(std::span<const double> src, int h, int w, std::span<double> dst, int oh, int ow) {
  if (h == oh && w == ow) {
    std::copy(src.begin(), src.end(), dst.begin());
    return;
  }
  const auto ty = bilinear_taps(h, oh);
  const auto tx = bilinear_taps(w, ow);
  for (int y = 0; y < oh; ++y) {
    const double* r0 = src.data() + static_cast<std::size_t>(ty[y].i0) * w;
    const double* r1 = src.data() + static_cast<std::size_t>(ty[y].i1) * w;
    const double fy = ty[y].frac;
    for (int x = 0; x < ow; ++x) {
      const auto& t = tx[x];
      const double top = r0[t.i0] + (r0[t.i1] - r0[t.i0]) * t.frac;
      const double bot = r1[t.i0] + (r1[t.i1] - r1[t.i0]) * t.frac;
      dst[static_cast<std::size_t>(y) * ow + x] = top + (bot - top) * fy;
    }
  }
}

}  // namespace detail

/// Bilinear resize with half-pixel centers; exact passthrough at equal size.
inline Grid upsample_bilinear(const Grid& map, int height, int width) {
  if (map.height() < 1 || map.width() < 1) throw ValidationError("upsample_bilinear: empty source map");
  if (height < 1 || width < 1) throw ValidationError("upsample_bilinear: zero-size target");
  Grid out(height, width);
  detail::resample_plane(map.values(), map.height(), map.width(), out.values(), height, width);
  return out;
}

/// Per-channel bilinear resize of a tensor.
inline Tensor resize_bilinear(const Tensor& t, int height, int width) {
  if (t.height() < 1 || t.width() < 1) throw ValidationError("resize_bilinear: empty source");
  if (height < 1 || width < 1) throw ValidationError("resize_bilinear: zero-size target");
  Tensor out(t.channels(), height, width);
  for (int c = 0; c < t.channels(); ++c)
    detail::resample_plane(t.channel(c), t.height(), t.width(), out.channel(c), height, width);
  return out;
}

/// Elementwise product of every image channel with the saliency map.
inline ImageTensor mask_input(const ImageTensor& image, const SaliencyMap& saliency) {
  if (saliency.height() != image.height() || saliency.width() != image.width())
    throw ValidationError("mask_input: saliency " + std::to_string(saliency.height()) + "x" +
                          std::to_string(saliency.width()) + " does not match image " + image.shape_string());
  ImageTensor out = image;
  const auto& m = saliency.values();
  for (int c = 0; c < out.channels(); ++c) {
    auto ch = out.channel(c);
    for (std::size_t i = 0; i < ch.size(); ++i) ch[i] *= m[i];
  }
  return out;
}

/// Numerically stable softmax (max-subtracted).
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("softmax: empty input");
  for (double v : logits)
    if (!std::isfinite(v)) throw ValidationError("softmax: non-finite logit");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= sum;
  return p;
}

inline std::vector<double> softmax(const LogitVector& logits) { return softmax(std::span<const double>(logits.scores)); }

/// ReLU(Σ_k w_k A_k) at the activation's native resolution.
inline Grid weighted_sum_relu(const Tensor& maps, std::span<const double> weights) {
  if (static_cast<int>(weights.size()) != maps.channels())
    throw ValidationError("channel weight count does not match activation channels");
  Grid acc(maps.height(), maps.width(), 0.0);
  for (int k = 0; k < maps.channels(); ++k) {
    auto ch = maps.channel(k);
    for (std::size_t i = 0; i < ch.size(); ++i) acc.values()[i] += weights[k] * ch[i];
  }
  for (double& v : acc.values()) v = std::max(v, 0.0);
  return acc;
}

/// Upsamples a layer-resolution map to the image and normalizes it.
inline SaliencyMap finalize_map(const Grid& layer_map, int height, int width) {
  return min_max_normalize(upsample_bilinear(layer_map, height, width));
}

/// H_k: channel k upsampled to image resolution and min-max normalized.
inline SaliencyMap channel_mask(const Tensor& maps, int k, int height, int width) {
  return min_max_normalize(upsample_bilinear(Grid::from_channel(maps, k), height, width));
}

inline void require_inference(const Classifier& model) {
  if (model.mode() != Mode::inference) throw ContractError("CAM methods require a classifier in inference mode");
}

/// Logits of the image masked by each channel's normalized map, evaluated in
/// chunks of `batch_size`. Results do not depend on the chunking.
inline std::vector<LogitVector> masked_logits(const Classifier& model, const ImageTensor& image, const Tensor& maps,
                                              int batch_size) {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  const int K = maps.channels();
  std::vector<LogitVector> out(K);
  for (int start = 0; start < K; start += batch_size) {
    const int count = std::min(batch_size, K - start);
    std::vector<ImageTensor> batch;
    batch.reserve(count);
    for (int k = start; k < start + count; ++k)
      batch.push_back(mask_input(image, channel_mask(maps, k, image.height(), image.width())));
    parallel_for(static_cast<std::size_t>(count),
                 [&](std::size_t j) { out[start + j] = model.forward(batch[j]); });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel weights

inline ChannelWeights gradcam_weights(const GradientStack& grads) {
  const Tensor& g = grads.grads;
  std::vector<double> w(g.channels());
  for (int k = 0; k < g.channels(); ++k) {
    double s = 0.0;
    for (double v : g.channel(k)) s += v;
    w[k] = s / static_cast<double>(g.plane());
  }
  return {std::move(w), WeightingKind::gradient_gap};
}

inline ChannelWeights scorecam_weights(const Classifier& model, const ImageTensor& image, int cls, const Tensor& maps,
                                       int batch_size) {
  const ImageTensor black(image.channels(), image.height(), image.width(), 0.0);
  const double baseline = model.forward(black)[cls];
  const auto logits = masked_logits(model, image, maps, batch_size);
  std::vector<double> scores(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) scores[k] = logits[k][cls] - baseline;
  return {softmax(std::span<const double>(scores)), WeightingKind::score_softmax};
}

/// Confidence weights are the target-class probability of each channel-masked
/// input; logit weights are the raw target logit of the same inputs.
inline ChannelWeights cfdcam_weights(const Classifier& model, const ImageTensor& image, int cls, const Tensor& maps,
                                     Weighting weighting, int batch_size) {
  const auto logits = masked_logits(model, image, maps, batch_size);
  std::vector<double> w(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k)
    w[k] = weighting == Weighting::confidence ? softmax(logits[k])[cls] : logits[k][cls];
  return {std::move(w), weighting == Weighting::confidence ? WeightingKind::confidence : WeightingKind::logit};
}

// ---------------------------------------------------------------------------
// CAM methods

inline SaliencyMap grad_cam(const Classifier& model, const ImageTensor& image, int cls, const std::string& layer) {
  require_inference(model);
  const auto [acts, grads] = activations_and_gradients(model, image, cls, layer);
  const auto w = gradcam_weights(grads);
  return finalize_map(weighted_sum_relu(acts.maps, w.weights), image.height(), image.width());
}

inline SaliencyMap score_cam(const Classifier& model, const ImageTensor& image, int cls, const std::string& layer,
                             int batch_size = 8) {
  require_inference(model);
  check_class(model, cls);
  const auto acts = activations(model, image, layer);
  const auto w = scorecam_weights(model, image, cls, acts.maps, batch_size);
  return finalize_map(weighted_sum_relu(acts.maps, w.weights), image.height(), image.width());
}

/// Per layer Σ_k ReLU(G_k) ⊙ A_k, upsampled and normalized; layers fused by
/// elementwise maximum and renormalized.
inline SaliencyMap layer_cam(const Classifier& model, const ImageTensor& image, int cls,
                             const std::vector<std::string>& layers) {
  require_inference(model);
  if (layers.empty()) throw ValidationError("layer_cam: empty layer list");
  Grid fused(image.height(), image.width(), 0.0);
  bool first = true;
  for (const auto& layer : layers) {
    const auto [acts, grads] = activations_and_gradients(model, image, cls, layer);
    Grid m(acts.maps.height(), acts.maps.width(), 0.0);
    for (int k = 0; k < acts.maps.channels(); ++k) {
      auto a = acts.maps.channel(k);
      auto g = grads.grads.channel(k);
      for (std::size_t i = 0; i < a.size(); ++i) m.values()[i] += std::max(g[i], 0.0) * a[i];
    }
    const SaliencyMap layer_map = finalize_map(m, image.height(), image.width());
    for (std::size_t i = 0; i < fused.size(); ++i)
      fused.values()[i] = first ? layer_map.values()[i] : std::max(fused.values()[i], layer_map.values()[i]);
    first = false;
  }
  return min_max_normalize(fused);
}

inline SaliencyMap cfd_cam(const Classifier& model, const ImageTensor& image, int cls, const std::string& layer,
                           Weighting weighting = Weighting::confidence, int batch_size = 8) {
  require_inference(model);
  check_class(model, cls);
  const auto acts = activations(model, image, layer);
  const auto w = cfdcam_weights(model, image, cls, acts.maps, weighting, batch_size);
  return finalize_map(weighted_sum_relu(acts.maps, w.weights), image.height(), image.width());
}

/// Method selection plus its arguments. An empty layer list means the
/// classifier default (last registered layer; every registered layer for LayerCAM).
struct CamRequest {
  CamMethod method = CamMethod::cfdcam;
  std::vector<std::string> layers;
  int target_class = 1;
  Weighting weighting = Weighting::confidence;
  int batch_size = 8;
};

inline std::vector<std::string> resolve_layers(const Classifier& model, const CamRequest& req) {
  if (req.layers.empty()) {
    if (req.method == CamMethod::layercam) return model.layer_registry();
    return {model.default_target_layer()};
  }
  if (req.method != CamMethod::layercam && req.layers.size() != 1)
    throw ValidationError(to_string(req.method) + " takes exactly one target layer");
  return req.layers;
}

inline SaliencyMap run_cam(const Classifier& model, const ImageTensor& image, const CamRequest& req) {
  const auto layers = resolve_layers(model, req);
  switch (req.method) {
    case CamMethod::gradcam: return grad_cam(model, image, req.target_class, layers.front());
    case CamMethod::scorecam: return score_cam(model, image, req.target_class, layers.front(), req.batch_size);
    case CamMethod::layercam: return layer_cam(model, image, req.target_class, layers);
    case CamMethod::cfdcam:
      return cfd_cam(model, image, req.target_class, layers.front(), req.weighting, req.batch_size);
  }
  throw ValidationError("unknown CAM method");
}

}  // namespace cfdcam
