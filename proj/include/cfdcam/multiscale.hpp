#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cfdcam/cam.hpp"
#include "cfdcam/error.hpp"
#include "cfdcam/parallel.hpp"

namespace cfdcam {

enum class Fusion { mean, max };

inline std::string to_string(Fusion f) { return f == Fusion::mean ? "mean" : "max"; }
inline Fusion parse_fusion(const std::string& s) {
  if (s == "mean") return Fusion::mean;
  if (s == "max") return Fusion::max;
  throw ValidationError("unknown fusion '" + s + "'");
}

/// Input scale factors and how per-scale maps are combined.
struct ScaleSpec {
  std::vector<double> factors{1.0, 2.0};
  Fusion fusion = Fusion::mean;

  void validate() const {
    if (factors.empty()) throw ValidationError("ScaleSpec: no scale factors");
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (!(factors[i] > 0.0) || !std::isfinite(factors[i])) throw ValidationError("ScaleSpec: factors must be > 0");
      for (std::size_t j = 0; j < i; ++j)
        if (factors[j] == factors[i]) throw ValidationError("ScaleSpec: duplicate factor");
    }
  }
};

/// Bilinear resize to (round(f·H), round(f·W)).
inline ImageTensor rescale_image(const ImageTensor& image, double factor, int min_size = 8) {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw ValidationError("rescale_image: factor must be > 0");
  const int h = static_cast<int>(std::lround(factor * image.height()));
  const int w = static_cast<int>(std::lround(factor * image.width()));
  if (h < min_size || w < min_size)
    throw ValidationError("rescale_image: target " + std::to_string(h) + "x" + std::to_string(w) + " below " +
                          std::to_string(min_size));
  return resize_bilinear(image, h, w);
}

/// Elementwise mean or max of equally shaped maps, then min-max normalized.
inline SaliencyMap fuse_maps(const std::vector<SaliencyMap>& maps, Fusion fusion) {
  if (maps.empty()) throw ValidationError("fuse_maps: no maps");
  const int h = maps.front().height(), w = maps.front().width();
  Grid acc(h, w, 0.0);
  for (std::size_t m = 0; m < maps.size(); ++m) {
    if (maps[m].height() != h || maps[m].width() != w) throw ValidationError("fuse_maps: shape mismatch");
    const auto& v = maps[m].values();
    for (std::size_t i = 0; i < acc.size(); ++i) {
      if (fusion == Fusion::mean)
        acc.values()[i] += v[i];
      else
        acc.values()[i] = m == 0 ? v[i] : std::max(acc.values()[i], v[i]);
    }
  }
  if (fusion == Fusion::mean)
    for (double& v : acc.values()) v /= static_cast<double>(maps.size());
  return min_max_normalize(acc);
}

/// Maps from each scale, each resized back to the original resolution and normalized.
inline std::vector<SaliencyMap> per_scale_maps(const CamRequest& request, const Classifier& model,
                                               const ImageTensor& image, const ScaleSpec& scales) {
  scales.validate();
  std::vector<SaliencyMap> maps(scales.factors.size());
  parallel_for(scales.factors.size(), [&](std::size_t i) {
    const double f = scales.factors[i];
    const ImageTensor scaled = f == 1.0 ? image : rescale_image(image, f, model.input_spec().min_size);
    const SaliencyMap m = run_cam(model, scaled, request);
    maps[i] = min_max_normalize(upsample_bilinear(m.grid(), image.height(), image.width()));
  });
  return maps;
}

inline SaliencyMap multiscale_cam(const CamRequest& request, const Classifier& model, const ImageTensor& image,
                                  const ScaleSpec& scales) {
  return fuse_maps(per_scale_maps(request, model, image, scales), scales.fusion);
}

}  // namespace cfdcam
