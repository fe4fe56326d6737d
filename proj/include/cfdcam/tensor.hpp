#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cfdcam/error.hpp"

namespace cfdcam {

/// Dense C×H×W array of doubles, channel-major then row-major.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) throw ValidationError("Tensor: negative dimension");
    data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }
  Tensor(int channels, int height, int width, std::vector<double> values)
      : channels_(channels), height_(height), width_(width), data_(std::move(values)) {
    if (data_.size() != static_cast<std::size_t>(channels) * height * width)
      throw ValidationError("Tensor: value count does not match shape");
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  double operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  std::span<double> channel(int c) { return {data_.data() + c * plane(), plane()}; }
  std::span<const double> channel(int c) const { return {data_.data() + c * plane(), plane()}; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor& o) const {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }
  std::string shape_string() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Dense H×W array of doubles, row-major.
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, double fill = 0.0) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw ValidationError("Grid: negative dimension");
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }
  Grid(int height, int width, std::vector<double> values)
      : height_(height), width_(width), data_(std::move(values)) {
    if (data_.size() != static_cast<std::size_t>(height) * width)
      throw ValidationError("Grid: value count does not match shape");
  }
  /// Copies one channel out of a tensor.
  static Grid from_channel(const Tensor& t, int c) {
    auto ch = t.channel(c);
    return Grid(t.height(), t.width(), std::vector<double>(ch.begin(), ch.end()));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  double operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Grid& o) const { return height_ == o.height_ && width_ == o.width_; }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// The classifier input: C×H×W, finite.
using ImageTensor = Tensor;

inline void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw ValidationError(std::string(what) + ": non-finite value");
}
inline void require_finite(const Grid& g, const char* what) {
  if (!g.all_finite()) throw ValidationError(std::string(what) + ": non-finite value");
}

}  // namespace cfdcam
