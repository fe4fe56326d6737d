#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "cfdcam/error.hpp"
#include "cfdcam/metrics.hpp"
#include "cfdcam/random.hpp"
#include "cfdcam/tensor.hpp"
#include "cfdcam/volume_io.hpp"

namespace cfdcam {

enum class Modality { T1, T1CE, T2, FLAIR };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::T1: return "T1";
    case Modality::T1CE: return "T1-CE";
    case Modality::T2: return "T2";
    case Modality::FLAIR: return "T2-FLAIR";
  }
  return "?";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "T1") return Modality::T1;
  if (s == "T1-CE" || s == "T1CE") return Modality::T1CE;
  if (s == "T2") return Modality::T2;
  if (s == "T2-FLAIR" || s == "FLAIR") return Modality::FLAIR;
  throw ValidationError("unknown modality '" + s + "'");
}

/// One case: co-registered modality volumes plus an optional tumor mask
/// (nonzero voxels are tumor).
struct VolumeRecord {
  std::string case_id;
  std::map<Modality, Volume> volumes;
  std::optional<Volume> mask;

  void validate() const {
    if (volumes.empty()) throw ValidationError("case " + case_id + ": no modality volumes");
    const Volume& ref = volumes.begin()->second;
    for (const auto& [m, v] : volumes)
      if (!v.same_shape(ref)) throw ValidationError("case " + case_id + ": modality shapes differ");
    if (mask && !mask->same_shape(ref)) throw ValidationError("case " + case_id + ": mask shape differs");
  }
};

/// A 2D training sample. Deliberately has no segmentation field: everything
/// on the training path is built from this type.
struct SliceRecord {
  std::string case_id;
  int slice_index = 0;
  Modality modality = Modality::FLAIR;
  ImageTensor image;  // 1×H×W
  int label = 0;
};

/// Evaluation-only sample: a slice plus its ground-truth mask.
struct EvalRecord {
  SliceRecord slice;
  BinaryMask mask;
};

template <class T>
concept HasMaskMember = requires(const T& t) { t.mask; };

static_assert(!HasMaskMember<SliceRecord>, "training records must not carry segmentation masks");

/// Image-level labels keyed by (case_id, slice_index, modality), for mask-free data.
using LabelTable = std::map<std::tuple<std::string, int, Modality>, int>;

enum class Normalization { none, minmax, zscore };

struct SliceOptions {
  Normalization normalization = Normalization::minmax;
  int min_positive_pixels = 1;
};

struct SlicedVolume {
  std::vector<SliceRecord> slices;
  std::vector<EvalRecord> eval;  // empty when the volume has no mask
};

/// 1 iff the mask has at least `min_pixels` foreground pixels.
inline int derive_label(const BinaryMask& mask_slice, int min_pixels = 1) {
  return static_cast<int>(mask_slice.count()) >= std::max(min_pixels, 1) ? 1 : 0;
}

/// Per-slice min-max to [0,1]; a constant slice becomes zeros.
inline ImageTensor normalize_intensity(const ImageTensor& slice) {
  require_finite(slice, "normalize_intensity");
  ImageTensor out(slice.channels(), slice.height(), slice.width(), 0.0);
  if (slice.empty()) return out;
  const auto [lo, hi] = std::minmax_element(slice.values().begin(), slice.values().end());
  if (*hi > *lo) {
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < slice.size(); ++i) out.values()[i] = (slice.values()[i] - *lo) / range;
  }
  return out;
}

/// Zero mean, unit variance per slice; a constant slice becomes zeros.
inline ImageTensor zscore_intensity(const ImageTensor& slice) {
  require_finite(slice, "zscore_intensity");
  ImageTensor out(slice.channels(), slice.height(), slice.width(), 0.0);
  if (slice.empty()) return out;
  double mean = 0.0;
  for (double v : slice.values()) mean += v;
  mean /= static_cast<double>(slice.size());
  double var = 0.0;
  for (double v : slice.values()) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(slice.size()));
  if (sd > 0.0)
    for (std::size_t i = 0; i < slice.size(); ++i) out.values()[i] = (slice.values()[i] - mean) / sd;
  return out;
}

inline ImageTensor apply_normalization(const ImageTensor& slice, Normalization n) {
  switch (n) {
    case Normalization::none: return slice;
    case Normalization::minmax: return normalize_intensity(slice);
    case Normalization::zscore: return zscore_intensity(slice);
  }
  return slice;
}

inline ImageTensor volume_slice(const Volume& v, int z) {
  ImageTensor img(1, v.height, v.width);
  const float* src = v.data.data() + static_cast<std::size_t>(z) * v.slice_size();
  std::copy(src, src + v.slice_size(), img.values().begin());
  return img;
}

inline BinaryMask mask_slice(const Volume& mask, int z) {
  BinaryMask m(mask.height, mask.width, mask.spacing[1], mask.spacing[2]);
  const float* src = mask.data.data() + static_cast<std::size_t>(z) * mask.slice_size();
  for (std::size_t i = 0; i < mask.slice_size(); ++i) m.set_at(i, src[i] != 0.0f);
  return m;
}

/// Slices one modality along z. Labels come from the mask when present,
/// otherwise from `labels`; with neither, slicing fails.
inline SlicedVolume slice_volume(const VolumeRecord& volume, Modality modality, const LabelTable* labels = nullptr,
                                 const SliceOptions& options = {}) {
  volume.validate();
  const auto it = volume.volumes.find(modality);
  if (it == volume.volumes.end())
    throw ValidationError("case " + volume.case_id + ": modality " + to_string(modality) + " not present");
  if (!volume.mask && !labels)
    throw ValidationError("case " + volume.case_id + ": no mask and no external label table");
  const Volume& v = it->second;
  SlicedVolume out;
  for (int z = 0; z < v.depth; ++z) {
    ImageTensor img = apply_normalization(volume_slice(v, z), options.normalization);
    SliceRecord rec{volume.case_id, z, modality, std::move(img), 0};
    if (volume.mask) {
      BinaryMask m = mask_slice(*volume.mask, z);
      rec.label = derive_label(m, options.min_positive_pixels);
      out.eval.push_back({rec, std::move(m)});
    } else {
      const auto lit = labels->find({volume.case_id, z, modality});
      if (lit == labels->end())
        throw ValidationError("no label for " + volume.case_id + " slice " + std::to_string(z) + " " +
                              to_string(modality));
      rec.label = lit->second;
    }
    out.slices.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Case-level splits

struct SplitSpec {
  std::array<double, 3> ratios{8.0, 1.0, 1.0};  // train, val, test
  std::uint64_t seed = 0;
};

struct CaseSplits {
  std::vector<std::string> train, val, test;
};

/// Deterministic case-level partition. Val and test sizes are floor(n·r/Σr);
/// the remainder goes to train. Input order does not matter.
inline CaseSplits split_cases(std::vector<std::string> case_ids, const SplitSpec& spec) {
  for (double r : spec.ratios)
    if (!(r > 0.0)) throw ValidationError("split_cases: ratios must be positive");
  std::sort(case_ids.begin(), case_ids.end());
  if (std::adjacent_find(case_ids.begin(), case_ids.end()) != case_ids.end())
    throw ValidationError("split_cases: duplicate case id");
  const double total = spec.ratios[0] + spec.ratios[1] + spec.ratios[2];
  const std::size_t n = case_ids.size();
  const auto share = [&](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r / total + 1e-9));
  };
  const std::size_t n_val = share(spec.ratios[1]), n_test = share(spec.ratios[2]);
  if (n_val == 0 || n_test == 0 || n_val + n_test >= n)
    throw ValidationError("split_cases: too few cases (" + std::to_string(n) + ") for the requested ratios");
  Rng rng(spec.seed);
  rng.shuffle(case_ids);
  CaseSplits s;
  s.val.assign(case_ids.begin(), case_ids.begin() + n_val);
  s.test.assign(case_ids.begin() + n_val, case_ids.begin() + n_val + n_test);
  s.train.assign(case_ids.begin() + n_val + n_test, case_ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic blob data

struct SynthSpec {
  int n_cases = 250;
  std::uint64_t seed = 1;
  int image_size = 64;
  int slices_per_case = 8;
  Modality modality = Modality::FLAIR;
  double tumor_probability = 0.85;
  double min_radius = 8.0;
  double max_radius = 12.0;
  double min_slice_radius = 4.0;
  double min_contrast = 0.3;
  double max_contrast = 0.6;
  double texture_amplitude = 0.03;  // upper bound per texture wave
  double noise_sigma = 0.03;
  double sigma_ratio = 1.0;
  double marker_level = 1.0;  // fixed 3x3 corner patch anchoring the slice maximum
};

/// Pixels whose centers lie within `radius` of (cy, cx).
inline void draw_disc(BinaryMask& m, double cy, double cx, double radius) {
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= radius * radius) m.set(y, x);
    }
}

namespace detail {

// Smooth low-frequency texture inside an elliptical "head", plus pixel noise.
inline void synth_background(Volume& v, int z, const SynthSpec& spec, Rng& rng) {
  const int n = v.width;
  const double ey = (n - 1) / 2.0, ex = (n - 1) / 2.0;
  const double ay = n * 0.44, ax = n * 0.40;
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> waves(4);
  for (auto& w : waves)
    w = {rng.uniform(-0.35, 0.35), rng.uniform(-0.35, 0.35), rng.uniform(0, 2 * std::numbers::pi),
         rng.uniform(0.3, 1.0) * spec.texture_amplitude};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double r = ((y - ey) / ay) * ((y - ey) / ay) + ((x - ex) / ax) * ((x - ex) / ax);
      const bool inside = r <= 1.0;
      double val = inside ? 0.35 : 0.05;
      if (inside)
        for (const auto& w : waves) val += w.amp * std::sin(w.fy * y + w.fx * x + w.phase);
      val += spec.noise_sigma * rng.normal();
      if (y >= 1 && y <= 3 && x >= 1 && x <= 3) val = spec.marker_level;
      v.at(z, y, x) = static_cast<float>(val);
    }
}

}  // namespace detail

/// Geometry of one drawn blob slice.
struct SynthBlob {
  std::string case_id;
  int slice_index = 0;
  double cy = 0.0, cx = 0.0, radius = 0.0;
};

/// Single-modality volumes of textured backgrounds; tumor cases carry one
/// bright Gaussian blob spanning a contiguous run of slices, truncated at a
/// disc whose pixels form the exact ground-truth mask.
inline std::vector<VolumeRecord> synth_blob_dataset(const SynthSpec& spec, std::vector<SynthBlob>* blobs = nullptr) {
  if (spec.n_cases < 10) throw ValidationError("synth_blob_dataset: need at least 10 cases");
  if (spec.image_size < 2 * static_cast<int>(spec.max_radius) + 8)
    throw ValidationError("synth_blob_dataset: image too small for the blob radius");
  Rng master(spec.seed);
  std::vector<VolumeRecord> out;
  out.reserve(spec.n_cases);
  const int n = spec.image_size, depth = spec.slices_per_case;
  for (int c = 0; c < spec.n_cases; ++c) {
    Rng rng(master.next());
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04d", c);
    VolumeRecord rec{id, {}, Volume(depth, n, n)};
    Volume img(depth, n, n);
    for (int z = 0; z < depth; ++z) detail::synth_background(img, z, spec, rng);

    if (rng.uniform() < spec.tumor_probability) {
      const double radius = rng.uniform(spec.min_radius, spec.max_radius);
      const double margin = radius + 2.0;
      const double cy = rng.uniform(margin, n - 1 - margin), cx = rng.uniform(margin, n - 1 - margin);
      const int length = 2 + static_cast<int>(rng.below(std::min(5, depth - 1)));
      const int z0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(depth - length + 1)));
      const double zmid = z0 + (length - 1) / 2.0;
      const double contrast = rng.uniform(spec.min_contrast, spec.max_contrast);
      for (int z = z0; z < z0 + length; ++z) {
        const double r = radius * (1.0 - 0.5 * std::abs(z - zmid) / (length / 2.0 + 0.5));
        if (r < spec.min_slice_radius) continue;
        const double sigma = spec.sigma_ratio * r;
        const double jy = cy + rng.uniform(-1, 1), jx = cx + rng.uniform(-1, 1);
        BinaryMask disc(n, n);
        draw_disc(disc, jy, jx, r);
        if (blobs) blobs->push_back({rec.case_id, z, jy, jx, r});
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            if (!disc(y, x)) continue;
            const double d2 = (y - jy) * (y - jy) + (x - jx) * (x - jx);
            img.at(z, y, x) += static_cast<float>(contrast * std::exp(-d2 / (2 * sigma * sigma)));
            rec.mask->at(z, y, x) = 1.0f;
          }
      }
    }
    rec.volumes.emplace(spec.modality, std::move(img));
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace cfdcam
