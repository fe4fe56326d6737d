#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfdcam/error.hpp"
#include "cfdcam/tensor.hpp"

namespace cfdcam::nn {

/// A named parameter array. Non-trainable parameters (running statistics) are
/// serialized with the model but never updated by an optimizer.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  bool trainable = true;

  static Param make(std::string name, std::vector<int> shape, bool trainable = true) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return Param{std::move(name), std::move(shape), std::vector<double>(n, 0.0), trainable};
  }
};

/// Gradient buffers aligned one-to-one with a layer's params(). An empty sink
/// means parameter gradients are not wanted.
using GradSink = std::span<std::vector<double>>;

/// A differentiable map on single C×H×W samples.
///
/// Layers are stateless during evaluation: backward() receives the forward
/// input and recomputes whatever intermediates it needs, so a const layer can
/// be shared by concurrent callers.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Tensor forward(const Tensor& x) const = 0;
  /// Returns dL/dx given dL/dy; accumulates parameter gradients into `grads`.
  virtual Tensor backward(const Tensor& x, const Tensor& grad_out, GradSink grads) const = 0;
  virtual std::vector<Param*> params() { return {}; }

  std::size_t param_count() const { return const_cast<Layer*>(this)->params().size(); }
};

inline GradSink sub_sink(GradSink grads, std::size_t offset, std::size_t count) {
  if (grads.empty()) return {};
  return grads.subspan(offset, count);
}

class Conv2d final : public Layer {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding,
         bool bias)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding), has_bias_(bias) {
    weight_ = Param::make(name + ".weight", {out_, in_, k_, k_});
    if (has_bias_) bias_ = Param::make(name + ".bias", {out_});
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::vector<Param*> params() override {
    if (has_bias_) return {&weight_, &bias_};
    return {&weight_};
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

  Tensor forward(const Tensor& x) const override {
    if (x.channels() != in_)
      throw InputSpecError("Conv2d " + weight_.name + ": expected " + std::to_string(in_) +
                           " channels, got " + std::to_string(x.channels()));
    const int oh = out_size(x.height()), ow = out_size(x.width());
    if (oh < 1 || ow < 1) throw InputSpecError("Conv2d: input too small");
    Tensor y(out_, oh, ow);
    for (int o = 0; o < out_; ++o) {
      double* yo = y.data() + o * y.plane();
      if (has_bias_) std::fill(yo, yo + y.plane(), bias_.value[o]);
      for (int i = 0; i < in_; ++i) {
        const double* xi = x.data() + i * x.plane();
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const double w = weight_.value[((o * in_ + i) * k_ + ky) * k_ + kx];
            const auto [x0, x1] = valid_range(kx, x.width(), ow);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.height()) continue;
              const double* xrow = xi + static_cast<std::size_t>(iy) * x.width();
              double* yrow = yo + static_cast<std::size_t>(oy) * ow;
              for (int ox = x0; ox < x1; ++ox) yrow[ox] += w * xrow[ox * stride_ - pad_ + kx];
            }
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& g, GradSink grads) const override {
    const int oh = g.height(), ow = g.width();
    Tensor gx(in_, x.height(), x.width());
    std::vector<double>* gw = grads.empty() ? nullptr : &grads[0];
    if (has_bias_ && gw) {
      auto& gb = grads[1];
      for (int o = 0; o < out_; ++o) {
        double s = 0.0;
        for (double v : g.channel(o)) s += v;
        gb[o] += s;
      }
    }
    for (int o = 0; o < out_; ++o) {
      const double* go = g.data() + o * g.plane();
      for (int i = 0; i < in_; ++i) {
        const double* xi = x.data() + i * x.plane();
        double* gxi = gx.data() + i * gx.plane();
        for (int ky = 0; ky < k_; ++ky) {
          for (int kx = 0; kx < k_; ++kx) {
            const std::size_t widx = ((o * in_ + i) * k_ + ky) * k_ + kx;
            const double w = weight_.value[widx];
            const auto [x0, x1] = valid_range(kx, x.width(), ow);
            double acc = 0.0;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride_ - pad_ + ky;
              if (iy < 0 || iy >= x.height()) continue;
              const std::size_t xoff = static_cast<std::size_t>(iy) * x.width();
              const double* grow = go + static_cast<std::size_t>(oy) * ow;
              for (int ox = x0; ox < x1; ++ox) {
                const int ix = ox * stride_ - pad_ + kx;
                gxi[xoff + ix] += w * grow[ox];
                acc += grow[ox] * xi[xoff + ix];
              }
            }
            if (gw) (*gw)[widx] += acc;
          }
        }
      }
    }
    return gx;
  }

 private:
  // Output columns whose input column ox*stride - pad + kx lies inside [0, width).
  std::pair<int, int> valid_range(int kx, int width, int ow) const {
    int lo = 0;
    while (lo < ow && lo * stride_ - pad_ + kx < 0) ++lo;
    int hi = ow;
    while (hi > lo && (hi - 1) * stride_ - pad_ + kx >= width) --hi;
    return {lo, hi};
  }

  int in_, out_, k_, stride_, pad_;
  bool has_bias_;
  Param weight_;
  Param bias_;
};

/// Batch normalization with frozen statistics: an inference-mode affine map.
/// The affine scale and shift stay trainable; running statistics never change.
class BatchNorm2d final : public Layer {
 public:
  BatchNorm2d(std::string name, int channels, double eps = 1e-5) : channels_(channels), eps_(eps) {
    gamma_ = Param::make(name + ".weight", {channels});
    beta_ = Param::make(name + ".bias", {channels});
    mean_ = Param::make(name + ".running_mean", {channels}, false);
    var_ = Param::make(name + ".running_var", {channels}, false);
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0);
    std::fill(var_.value.begin(), var_.value.end(), 1.0);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  std::vector<Param*> params() override { return {&gamma_, &beta_, &mean_, &var_}; }

  Tensor forward(const Tensor& x) const override {
    if (x.channels() != channels_) throw InputSpecError("BatchNorm2d: channel mismatch");
    Tensor y = x;
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(var_.value[c] + eps_);
      const double scale = gamma_.value[c] * inv;
      const double shift = beta_.value[c] - mean_.value[c] * scale;
      for (double& v : y.channel(c)) v = v * scale + shift;
    }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& g, GradSink grads) const override {
    Tensor gx(x.channels(), x.height(), x.width());
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(var_.value[c] + eps_);
      const double scale = gamma_.value[c] * inv;
      auto gc = g.channel(c);
      auto xc = x.channel(c);
      auto gxc = gx.channel(c);
      double dgamma = 0.0, dbeta = 0.0;
      for (std::size_t j = 0; j < gc.size(); ++j) {
        gxc[j] = gc[j] * scale;
        dgamma += gc[j] * (xc[j] - mean_.value[c]) * inv;
        dbeta += gc[j];
      }
      if (!grads.empty()) {
        grads[0][c] += dgamma;
        grads[1][c] += dbeta;
      }
    }
    return gx;
  }

 private:
  int channels_;
  double eps_;
  Param gamma_, beta_, mean_, var_;
};

class ReLU final : public Layer {
 public:
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  Tensor forward(const Tensor& x) const override {
    Tensor y = x;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
  }
  Tensor backward(const Tensor& x, const Tensor& g, GradSink) const override {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(x.values()[i] > 0.0)) gx.values()[i] = 0.0;
    return gx;
  }
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(int kernel, int stride, int padding) : k_(kernel), stride_(stride), pad_(padding) {}
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }

  Tensor forward(const Tensor& x) const override {
    Tensor y(x.channels(), out_size(x.height()), out_size(x.width()));
    for (int c = 0; c < x.channels(); ++c)
      for (int oy = 0; oy < y.height(); ++oy)
        for (int ox = 0; ox < y.width(); ++ox) {
          const auto [iy, ix] = argmax(x, c, oy, ox);
          y(c, oy, ox) = x(c, iy, ix);
        }
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& g, GradSink) const override {
    Tensor gx(x.channels(), x.height(), x.width());
    for (int c = 0; c < x.channels(); ++c)
      for (int oy = 0; oy < g.height(); ++oy)
        for (int ox = 0; ox < g.width(); ++ox) {
          const auto [iy, ix] = argmax(x, c, oy, ox);
          gx(c, iy, ix) += g(c, oy, ox);
        }
    return gx;
  }

 private:
  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

  // First maximal element in scan order, so ties route gradient deterministically.
  std::pair<int, int> argmax(const Tensor& x, int c, int oy, int ox) const {
    int by = -1, bx = -1;
    double best = 0.0;
    for (int ky = 0; ky < k_; ++ky)
      for (int kx = 0; kx < k_; ++kx) {
        const int iy = oy * stride_ - pad_ + ky, ix = ox * stride_ - pad_ + kx;
        if (iy < 0 || iy >= x.height() || ix < 0 || ix >= x.width()) continue;
        if (by < 0 || x(c, iy, ix) > best) {
          best = x(c, iy, ix);
          by = iy;
          bx = ix;
        }
      }
    return {by, bx};
  }

  int k_, stride_, pad_;
};

/// Chain of layers. Backward replays the chain to recover each layer's input.
class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& o) {
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& o) {
    if (this != &o) {
      Sequential tmp(o);
      layers_ = std::move(tmp.layers_);
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <class L, class... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i); }
  const Layer& at(std::size_t i) const { return *layers_.at(i); }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }
  std::vector<Param*> params() override {
    std::vector<Param*> out;
    for (auto& l : layers_)
      for (Param* p : l->params()) out.push_back(p);
    return out;
  }

  Tensor forward(const Tensor& x) const override {
    Tensor cur = x;
    for (const auto& l : layers_) cur = l->forward(cur);
    return cur;
  }

  Tensor backward(const Tensor& x, const Tensor& g, GradSink grads) const override {
    std::vector<Tensor> inputs;
    inputs.reserve(layers_.size());
    Tensor cur = x;
    for (const auto& l : layers_) {
      inputs.push_back(cur);
      cur = l->forward(cur);
    }
    std::vector<std::size_t> offsets(layers_.size() + 1, 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) offsets[i + 1] = offsets[i] + layers_[i]->param_count();
    Tensor grad = g;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      grad = layers_[i]->backward(inputs[i], grad, sub_sink(grads, offsets[i], offsets[i + 1] - offsets[i]));
    }
    return grad;
  }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Residual basic block: relu(bn2(conv2(relu(bn1(conv1 x)))) + shortcut(x)).
class BasicBlock final : public Layer {
 public:
  BasicBlock(const std::string& name, int in_channels, int out_channels, int stride) {
    main_.emplace<Conv2d>(name + ".conv1", in_channels, out_channels, 3, stride, 1, false);
    main_.emplace<BatchNorm2d>(name + ".bn1", out_channels);
    main_.emplace<ReLU>();
    main_.emplace<Conv2d>(name + ".conv2", out_channels, out_channels, 3, 1, 1, false);
    main_.emplace<BatchNorm2d>(name + ".bn2", out_channels);
    if (stride != 1 || in_channels != out_channels) {
      shortcut_.emplace<Conv2d>(name + ".downsample.0", in_channels, out_channels, 1, stride, 0, false);
      shortcut_.emplace<BatchNorm2d>(name + ".downsample.1", out_channels);
    }
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<BasicBlock>(*this); }
  std::vector<Param*> params() override {
    auto out = main_.params();
    for (Param* p : shortcut_.params()) out.push_back(p);
    return out;
  }

  Tensor forward(const Tensor& x) const override {
    Tensor y = pre_activation(x);
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    return y;
  }

  Tensor backward(const Tensor& x, const Tensor& g, GradSink grads) const override {
    const Tensor pre = pre_activation(x);
    Tensor gpre = g;
    for (std::size_t i = 0; i < gpre.size(); ++i)
      if (!(pre.values()[i] > 0.0)) gpre.values()[i] = 0.0;
    const std::size_t nmain = main_.param_count();
    Tensor gx = main_.backward(x, gpre, sub_sink(grads, 0, nmain));
    if (shortcut_.size() == 0) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx.values()[i] += gpre.values()[i];
    } else {
      Tensor gs = shortcut_.backward(x, gpre, sub_sink(grads, nmain, shortcut_.param_count()));
      for (std::size_t i = 0; i < gx.size(); ++i) gx.values()[i] += gs.values()[i];
    }
    return gx;
  }

 private:
  Tensor pre_activation(const Tensor& x) const {
    Tensor y = main_.forward(x);
    const Tensor s = shortcut_.size() == 0 ? x : shortcut_.forward(x);
    if (!y.same_shape(s)) throw InputSpecError("BasicBlock: shortcut shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] += s.values()[i];
    return y;
  }

  Sequential main_;
  Sequential shortcut_;
};

/// Fully connected layer on flat vectors: y = W x + b.
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, int in_features, int out_features) : in_(in_features), out_(out_features) {
    weight_ = Param::make(name + ".weight", {out_, in_});
    bias_ = Param::make(name + ".bias", {out_});
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }
  std::vector<Param*> params() { return {&weight_, &bias_}; }

  std::vector<double> forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_) throw InputSpecError("Linear: feature size mismatch");
    std::vector<double> y(bias_.value.begin(), bias_.value.end());
    for (int o = 0; o < out_; ++o) {
      const double* w = weight_.value.data() + static_cast<std::size_t>(o) * in_;
      double s = 0.0;
      for (int i = 0; i < in_; ++i) s += w[i] * x[i];
      y[o] += s;
    }
    return y;
  }

  /// dL/dx; accumulates into grads[0] (weight) and grads[1] (bias) when provided.
  std::vector<double> backward(std::span<const double> x, std::span<const double> g, GradSink grads) const {
    std::vector<double> gx(in_, 0.0);
    for (int o = 0; o < out_; ++o) {
      const double* w = weight_.value.data() + static_cast<std::size_t>(o) * in_;
      for (int i = 0; i < in_; ++i) gx[i] += w[i] * g[o];
      if (!grads.empty()) {
        for (int i = 0; i < in_; ++i) grads[0][static_cast<std::size_t>(o) * in_ + i] += g[o] * x[i];
        grads[1][o] += g[o];
      }
    }
    return gx;
  }

 private:
  int in_ = 0, out_ = 0;
  Param weight_, bias_;
};

}  // namespace cfdcam::nn
