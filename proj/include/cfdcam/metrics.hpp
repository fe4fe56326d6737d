#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cfdcam/cam.hpp"
#include "cfdcam/error.hpp"

namespace cfdcam {

/// H×W foreground mask with physical pixel spacing (row, col).
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, double row_spacing = 1.0, double col_spacing = 1.0)
      : height_(height), width_(width), spacing_{row_spacing, col_spacing} {
    if (height < 0 || width < 0) throw ValidationError("BinaryMask: negative dimension");
    if (!(row_spacing > 0.0) || !(col_spacing > 0.0)) throw ValidationError("BinaryMask: spacing must be > 0");
    data_.assign(static_cast<std::size_t>(height) * width, 0);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  double row_spacing() const { return spacing_[0]; }
  double col_spacing() const { return spacing_[1]; }

  bool operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v = true) { data_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool at(std::size_t i) const { return data_[i] != 0; }
  void set_at(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }

  std::size_t count() const { return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), 1)); }
  bool empty_foreground() const { return count() == 0; }
  bool same_shape(const BinaryMask& o) const { return height_ == o.height_ && width_ == o.width_; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  double spacing_[2] = {1.0, 1.0};
  std::vector<std::uint8_t> data_;
};

/// True where map > threshold (strict).
inline BinaryMask binarize(const SaliencyMap& map, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("binarize: threshold must be in (0,1)");
  BinaryMask m(map.height(), map.width());
  const auto& v = map.values();
  for (std::size_t i = 0; i < v.size(); ++i) m.set_at(i, v[i] > threshold);
  return m;
}

namespace detail {

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (!a.same_shape(b)) throw ValidationError(std::string(what) + ": mask shapes differ");
}

struct OverlapCounts {
  std::size_t a = 0, b = 0, both = 0;
};

inline OverlapCounts overlap(const BinaryMask& a, const BinaryMask& b) {
  OverlapCounts c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.at(i), y = b.at(i);
    c.a += x;
    c.b += y;
    c.both += x && y;
  }
  return c;
}

}  // namespace detail

/// 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
inline double dice(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b, "dice");
  const auto c = detail::overlap(a, b);
  if (c.a + c.b == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.a + c.b);
}

/// |A∩B| / |A∪B|; 1 when both masks are empty.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b, "iou");
  const auto c = detail::overlap(a, b);
  const std::size_t uni = c.a + c.b - c.both;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.both) / static_cast<double>(uni);
}

/// Linear interpolation between order statistics at rank q·(n-1).
inline double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile: empty input");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

namespace detail {

// Lower envelope of parabolas: out[i] = min_q f[q] + (pos_i - pos_q)^2 over
// finite f[q]; infinity when no finite site exists.
inline void squared_dt_1d(std::span<const double> f, double spacing, std::span<double> out) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double pq = q * spacing;
    while (k >= 0) {
      const double pv = v[k] * spacing;
      const double s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -inf : ((f[q] + pq * pq) - (f[v[k - 1]] + (v[k - 1] * spacing) * (v[k - 1] * spacing))) /
                               (2.0 * (pq - v[k - 1] * spacing));
    z[k + 1] = inf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), inf);
    return;
  }
  int j = 0;
  for (int i = 0; i < n; ++i) {
    const double pi = i * spacing;
    while (z[j + 1] < pi) ++j;
    const double d = (i - v[j]) * spacing;
    out[i] = d * d + f[v[j]];
  }
}

// Squared Euclidean distance from every pixel to the nearest foreground pixel of `m`.
inline std::vector<double> squared_distance_map(const BinaryMask& m) {
  const int h = m.height(), w = m.width();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cols(static_cast<std::size_t>(h) * w);
  std::vector<double> f(h), out(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = m(y, x) ? 0.0 : inf;
    squared_dt_1d(f, m.row_spacing(), out);
    for (int y = 0; y < h; ++y) cols[static_cast<std::size_t>(y) * w + x] = out[y];
  }
  std::vector<double> result(cols.size());
  for (int y = 0; y < h; ++y) {
    std::span<const double> row(cols.data() + static_cast<std::size_t>(y) * w, w);
    squared_dt_1d(row, m.col_spacing(), std::span<double>(result.data() + static_cast<std::size_t>(y) * w, w));
  }
  return result;
}

inline double diagonal(const BinaryMask& m) {
  const double hh = m.height() * m.row_spacing(), ww = m.width() * m.col_spacing();
  return std::sqrt(hh * hh + ww * ww);
}

template <class DirectedFn>
double hd95_with(const BinaryMask& a, const BinaryMask& b, DirectedFn directed) {
  const bool ea = a.empty_foreground(), eb = b.empty_foreground();
  if (ea && eb) return 0.0;
  if (ea || eb) return diagonal(a);
  return std::max(percentile_linear(directed(a, b), 0.95), percentile_linear(directed(b, a), 0.95));
}

}  // namespace detail

/// 95th-percentile symmetric Hausdorff distance over foreground pixel sets,
/// in spacing units. Both empty: 0. Exactly one empty: the image diagonal.
inline double hd95(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b, "hd95");
  return detail::hd95_with(a, b, [](const BinaryMask& from, const BinaryMask& to) {
    const auto dt = detail::squared_distance_map(to);
    std::vector<double> d;
    d.reserve(from.count());
    for (std::size_t i = 0; i < from.size(); ++i)
      if (from.at(i)) d.push_back(std::sqrt(dt[i]));
    return d;
  });
}

/// All-pairs reference implementation of hd95 with identical conventions.
inline double hd95_bruteforce(const BinaryMask& a, const BinaryMask& b) {
  detail::require_same_shape(a, b, "hd95_bruteforce");
  return detail::hd95_with(a, b, [](const BinaryMask& from, const BinaryMask& to) {
    std::vector<double> d;
    for (int y = 0; y < from.height(); ++y)
      for (int x = 0; x < from.width(); ++x) {
        if (!from(y, x)) continue;
        double best = std::numeric_limits<double>::infinity();
        for (int v = 0; v < to.height(); ++v)
          for (int u = 0; u < to.width(); ++u) {
            if (!to(v, u)) continue;
            const double dy = (y - v) * from.row_spacing(), dx = (x - u) * from.col_spacing();
            best = std::min(best, std::sqrt(dy * dy + dx * dx));
          }
        d.push_back(best);
      }
    return d;
  });
}

struct MetricTriple {
  double dice = 0.0;
  double iou = 0.0;
  double hd95 = 0.0;
};

inline MetricTriple evaluate_masks(const BinaryMask& prediction, const BinaryMask& truth) {
  return {dice(prediction, truth), iou(prediction, truth), hd95(prediction, truth)};
}

/// Population mean and standard deviation.
struct SummaryStat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

inline SummaryStat summarize(std::span<const double> values) {
  if (values.empty()) throw ValidationError("summarize: empty list");
  double sum = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("summarize: non-finite value");
    sum += v;
  }
  const double mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size())), values.size()};
}

/// "m±s" with a fixed number of decimals, e.g. "0.479±0.173".
inline std::string format_mean_std(const SummaryStat& s, int decimals = 3) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f±%.*f", decimals, s.mean, decimals, s.std);
  return buf;
}

}  // namespace cfdcam
