#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfdcam/error.hpp"
#include "cfdcam/nn/layers.hpp"
#include "cfdcam/random.hpp"
#include "cfdcam/tensor.hpp"

namespace cfdcam {

enum class Mode { inference, training };

/// Nominal input geometry. Every bundled architecture is fully convolutional
/// with global pooling, so any spatial size of at least `min_size` is accepted
/// when `variable_size` is set; channels must always match.
struct InputSpec {
  int channels = 1;
  int height = 64;
  int width = 64;
  bool variable_size = true;
  int min_size = 8;
};

struct LogitVector {
  std::vector<double> scores;

  std::size_t size() const { return scores.size(); }
  double operator[](std::size_t i) const { return scores[i]; }
  int argmax() const {
    return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  }
};

struct ActivationStack {
  std::string layer_name;
  Tensor maps;
};

struct GradientStack {
  std::string layer_name;
  Tensor grads;
};

/// Per-parameter gradient buffers for a whole classifier (body stages, then head).
using ParamGrads = std::vector<std::vector<double>>;

/// A feature extractor made of named stages, followed by global average
/// pooling and a linear class head.
///
/// Stage outputs are the hookable layers; the registry lists the ones exposed
/// to CAM methods. Evaluation is const and allocation-local, so one instance
/// can serve concurrent readers.
class Classifier {
 public:
  struct Stage {
    std::string name;
    std::unique_ptr<nn::Layer> layer;
  };

  /// Intermediate values of one forward pass.
  struct Trace {
    Tensor input;
    std::vector<Tensor> stage_outputs;
    std::vector<double> features;
    std::vector<double> logits;
  };

  Classifier(nlohmann::json architecture, InputSpec input, int num_classes, int feature_dim)
      : architecture_(std::move(architecture)),
        input_(input),
        num_classes_(num_classes),
        head_("fc", feature_dim, num_classes) {
    if (num_classes < 2) throw ValidationError("Classifier: need at least 2 classes");
  }

  Classifier(const Classifier& o)
      : architecture_(o.architecture_),
        input_(o.input_),
        num_classes_(o.num_classes_),
        registry_(o.registry_),
        mode_(o.mode_),
        head_(o.head_) {
    for (const auto& s : o.stages_) stages_.push_back({s.name, s.layer->clone()});
  }
  Classifier& operator=(const Classifier& o) {
    if (this != &o) {
      Classifier tmp(o);
      *this = std::move(tmp);
    }
    return *this;
  }
  Classifier(Classifier&&) noexcept = default;
  Classifier& operator=(Classifier&&) noexcept = default;

  void add_stage(std::string name, std::unique_ptr<nn::Layer> layer, bool hookable = true) {
    if (hookable) registry_.push_back(name);
    stages_.push_back({std::move(name), std::move(layer)});
  }

  const nlohmann::json& architecture() const { return architecture_; }
  std::string architecture_id() const { return architecture_.value("id", std::string{}); }
  const InputSpec& input_spec() const { return input_; }
  int num_classes() const { return num_classes_; }
  int feature_dim() const { return head_.in_features(); }
  const std::vector<std::string>& layer_registry() const { return registry_; }
  const std::string& default_target_layer() const { return registry_.back(); }
  const std::vector<Stage>& stages() const { return stages_; }

  /// Restricts the hookable registry (e.g. from a checkpoint manifest).
  void set_layer_registry(std::vector<std::string> names) {
    if (names.empty()) throw ValidationError("Classifier: layer registry must be non-empty");
    for (const auto& n : names) stage_index(n);
    registry_ = std::move(names);
  }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  nn::Linear& head() { return head_; }
  const nn::Linear& head() const { return head_; }

  void validate_input(const ImageTensor& image) const {
    if (image.channels() != input_.channels)
      throw InputSpecError("input has " + std::to_string(image.channels()) + " channels, model expects " +
                           std::to_string(input_.channels));
    if (input_.variable_size) {
      if (image.height() < input_.min_size || image.width() < input_.min_size)
        throw InputSpecError("input " + image.shape_string() + " below minimum spatial size " +
                             std::to_string(input_.min_size));
    } else if (image.height() != input_.height || image.width() != input_.width) {
      throw InputSpecError("input " + image.shape_string() + " does not match fixed input size");
    }
    require_finite(image, "classifier input");
  }

  Trace trace(const ImageTensor& image) const {
    validate_input(image);
    Trace t;
    t.input = image;
    t.stage_outputs.reserve(stages_.size());
    const Tensor* cur = &t.input;
    for (const auto& s : stages_) {
      t.stage_outputs.push_back(s.layer->forward(*cur));
      cur = &t.stage_outputs.back();
    }
    t.features = global_average(*cur);
    t.logits = head_.forward(t.features);
    return t;
  }

  LogitVector forward(const ImageTensor& image) const { return {trace(image).logits}; }

  std::vector<double> features(const ImageTensor& image) const { return trace(image).features; }

  std::size_t stage_index(const std::string& layer) const {
    for (std::size_t i = 0; i < stages_.size(); ++i)
      if (stages_[i].name == layer) return i;
    throw RegistryError("unknown layer '" + layer + "'");
  }

  std::size_t hooked_index(const std::string& layer) const {
    if (std::find(registry_.begin(), registry_.end(), layer) == registry_.end())
      throw RegistryError("layer '" + layer + "' is not in the layer registry");
    return stage_index(layer);
  }

  /// Runs the network from the output of `layer` onwards with a substituted activation.
  LogitVector replay_from(const std::string& layer, const Tensor& activation) const {
    const std::size_t idx = hooked_index(layer);
    Tensor cur = activation;
    for (std::size_t i = idx + 1; i < stages_.size(); ++i) cur = stages_[i].layer->forward(cur);
    return {head_.forward(global_average(cur))};
  }

  /// Gradient of logit `cls` with respect to the output of stage `upto`,
  /// accumulating parameter gradients for later stages into `grads` when given.
  Tensor backward_logits(const Trace& t, std::span<const double> grad_logits, std::size_t upto,
                         nn::GradSink grads = {}) const {
    const auto offsets = param_offsets();
    const std::size_t head_off = offsets.back();
    auto gfeat = head_.backward(t.features, grad_logits, nn::sub_sink(grads, head_off, 2));
    return backward_features_impl(t, gfeat, upto, grads, offsets);
  }

  /// Backpropagates a gradient on the pooled features through every stage.
  void backward_features(const Trace& t, std::span<const double> grad_features, nn::GradSink grads) const {
    const auto offsets = param_offsets();
    backward_features_impl(t, std::vector<double>(grad_features.begin(), grad_features.end()),
                           static_cast<std::size_t>(-1), grads, offsets);
  }

  /// Full parameter gradient of a loss given dL/dlogits.
  void backward_params(const Trace& t, std::span<const double> grad_logits, nn::GradSink grads) const {
    const auto offsets = param_offsets();
    auto gfeat = head_.backward(t.features, grad_logits, nn::sub_sink(grads, offsets.back(), 2));
    backward_features_impl(t, gfeat, static_cast<std::size_t>(-1), grads, offsets);
  }

  /// All parameters: each stage in order, then head weight and bias.
  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    for (auto& s : stages_)
      for (nn::Param* p : s.layer->params()) out.push_back(p);
    for (nn::Param* p : head_.params()) out.push_back(p);
    return out;
  }
  std::vector<const nn::Param*> params() const {
    auto ps = const_cast<Classifier*>(this)->params();
    return {ps.begin(), ps.end()};
  }

  ParamGrads zero_grads() const {
    ParamGrads g;
    for (const nn::Param* p : params()) g.emplace_back(p->value.size(), 0.0);
    return g;
  }

  static std::vector<double> global_average(const Tensor& t) {
    std::vector<double> f(t.channels(), 0.0);
    const double inv = 1.0 / static_cast<double>(t.plane());
    for (int c = 0; c < t.channels(); ++c) {
      double s = 0.0;
      for (double v : t.channel(c)) s += v;
      f[c] = s * inv;
    }
    return f;
  }

 private:
  // offsets[i] = first param index of stage i; back() = head offset.
  std::vector<std::size_t> param_offsets() const {
    std::vector<std::size_t> off(stages_.size() + 1, 0);
    for (std::size_t i = 0; i < stages_.size(); ++i) off[i + 1] = off[i] + stages_[i].layer->param_count();
    return off;
  }

  Tensor backward_features_impl(const Trace& t, const std::vector<double>& gfeat, std::size_t upto,
                                nn::GradSink grads, const std::vector<std::size_t>& offsets) const {
    const Tensor& last = t.stage_outputs.back();
    Tensor g(last.channels(), last.height(), last.width());
    const double inv = 1.0 / static_cast<double>(last.plane());
    for (int c = 0; c < last.channels(); ++c)
      for (double& v : g.channel(c)) v = gfeat[c] * inv;
    for (std::size_t i = stages_.size(); i-- > 0;) {
      if (i == upto) return g;
      const Tensor& in = i == 0 ? t.input : t.stage_outputs[i - 1];
      g = stages_[i].layer->backward(in, g, nn::sub_sink(grads, offsets[i], offsets[i + 1] - offsets[i]));
    }
    return g;
  }

  nlohmann::json architecture_;
  InputSpec input_;
  int num_classes_;
  std::vector<Stage> stages_;
  std::vector<std::string> registry_;
  Mode mode_ = Mode::inference;
  nn::Linear head_;
};

/// Immutable shared classifier; safe for concurrent read-only use.
using ClassifierHandle = std::shared_ptr<const Classifier>;

// ---------------------------------------------------------------------------
// Adapter operations

inline LogitVector forward(const Classifier& model, const ImageTensor& image) { return model.forward(image); }

inline ActivationStack activations(const Classifier& model, const ImageTensor& image, const std::string& layer) {
  const std::size_t idx = model.hooked_index(layer);
  auto t = model.trace(image);
  return {layer, std::move(t.stage_outputs[idx])};
}

inline void check_class(const Classifier& model, int cls) {
  if (cls < 0 || cls >= model.num_classes())
    throw IndexError("class index " + std::to_string(cls) + " outside [0, " + std::to_string(model.num_classes()) +
                     ")");
}

/// Activations at `layer` together with d(raw logit of cls)/d(activation).
inline std::pair<ActivationStack, GradientStack> activations_and_gradients(const Classifier& model,
                                                                           const ImageTensor& image, int cls,
                                                                           const std::string& layer) {
  check_class(model, cls);
  const std::size_t idx = model.hooked_index(layer);
  auto t = model.trace(image);
  std::vector<double> onehot(model.num_classes(), 0.0);
  onehot[cls] = 1.0;
  Tensor g = model.backward_logits(t, onehot, idx);
  return {ActivationStack{layer, std::move(t.stage_outputs[idx])}, GradientStack{layer, std::move(g)}};
}

inline GradientStack grad_class_wrt_layer(const Classifier& model, const ImageTensor& image, int cls,
                                          const std::string& layer) {
  return activations_and_gradients(model, image, cls, layer).second;
}

/// Central-difference estimate of d(logit cls)/d(activation) at the given flat
/// element indices of the `layer` activation, by replaying the network from that layer.
inline std::vector<double> finite_difference_at(const Classifier& model, const ImageTensor& image, int cls,
                                                const std::string& layer, double eps,
                                                std::span<const std::size_t> elements) {
  if (!(eps > 0.0)) throw ValidationError("finite_difference_gradient: epsilon must be > 0");
  check_class(model, cls);
  const Tensor base = activations(model, image, layer).maps;
  std::vector<double> out;
  out.reserve(elements.size());
  Tensor probe = base;
  for (std::size_t e : elements) {
    if (e >= base.size()) throw IndexError("finite_difference_gradient: element index out of range");
    const double a = base.values()[e];
    probe.values()[e] = a + eps;
    const double up = model.replay_from(layer, probe)[cls];
    probe.values()[e] = a - eps;
    const double down = model.replay_from(layer, probe)[cls];
    probe.values()[e] = a;
    out.push_back((up - down) / (2.0 * eps));
  }
  return out;
}

inline GradientStack finite_difference_gradient(const Classifier& model, const ImageTensor& image, int cls,
                                                const std::string& layer, double eps) {
  if (!(eps > 0.0)) throw ValidationError("finite_difference_gradient: epsilon must be > 0");
  const Tensor base = activations(model, image, layer).maps;
  std::vector<std::size_t> all(base.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto values = finite_difference_at(model, image, cls, layer, eps, all);
  return {layer, Tensor(base.channels(), base.height(), base.width(), std::move(values))};
}

// ---------------------------------------------------------------------------
// Architectures

namespace detail {

inline void init_uniform(nn::Param& p, double bound, Rng& rng) {
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

// He-uniform weights, small uniform biases.
inline void init_conv(nn::Conv2d& conv, bool has_bias, Rng& rng) {
  const double fan_in = static_cast<double>(conv.in_channels() * conv.kernel() * conv.kernel());
  init_uniform(conv.weight(), std::sqrt(6.0 / fan_in), rng);
  if (has_bias) init_uniform(conv.bias(), 1.0 / std::sqrt(fan_in), rng);
}

inline void init_linear(nn::Linear& lin, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(lin.in_features()));
  init_uniform(lin.weight(), bound, rng);
  init_uniform(lin.bias(), bound, rng);
}

}  // namespace detail

/// Shape of the small convolutional reference classifier.
struct ReferenceConfig {
  std::vector<int> widths{8, 16, 16};
  int convs_per_stage = 1;
  int in_channels = 1;
  int num_classes = 2;
  int image_size = 64;
};

inline nlohmann::json to_json(const ReferenceConfig& c) {
  return {{"id", "reference-cnn"},
          {"widths", c.widths},
          {"convs_per_stage", c.convs_per_stage},
          {"in_channels", c.in_channels}};
}

/// Builds the reference architecture with zero weights.
inline Classifier build_reference(const ReferenceConfig& cfg) {
  if (cfg.widths.empty() || cfg.convs_per_stage < 1) throw ValidationError("reference network: bad config");
  Classifier net(to_json(cfg), InputSpec{cfg.in_channels, cfg.image_size, cfg.image_size, true, 8}, cfg.num_classes,
                 cfg.widths.back());
  int in = cfg.in_channels;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const std::string name = "stage" + std::to_string(s + 1);
    auto seq = std::make_unique<nn::Sequential>();
    for (int k = 0; k < cfg.convs_per_stage; ++k) {
      const int stride = k == 0 ? 2 : 1;
      seq->emplace<nn::Conv2d>(name + ".conv" + std::to_string(k + 1), in, cfg.widths[s], 3, stride, 1, true);
      seq->emplace<nn::ReLU>();
      in = cfg.widths[s];
    }
    net.add_stage(name, std::move(seq));
  }
  return net;
}

/// Seeded reference classifier: stride-2 convolution stages (64×64 → 8×8 for
/// three stages), global average pooling, linear head. Registry: stage1..stageN.
inline Classifier reference_network(std::uint64_t seed, const ReferenceConfig& cfg = {}) {
  Classifier net = build_reference(cfg);
  Rng rng(seed);
  for (const auto& stage : net.stages()) {
    auto& seq = static_cast<nn::Sequential&>(*stage.layer);
    for (std::size_t i = 0; i < seq.size(); ++i)
      if (auto* conv = dynamic_cast<nn::Conv2d*>(&seq.at(i))) detail::init_conv(*conv, true, rng);
  }
  detail::init_linear(net.head(), rng);
  return net;
}

struct ResNetConfig {
  std::vector<int> blocks{2, 2, 2, 2};
  int base_width = 64;
  int in_channels = 3;
  int num_classes = 2;
  int image_size = 224;
};

inline nlohmann::json to_json(const ResNetConfig& c) {
  const bool is18 = c.blocks == std::vector<int>{2, 2, 2, 2};
  return {{"id", is18 ? "resnet18" : "resnet"}, {"blocks", c.blocks}, {"base_width", c.base_width}, {"in_channels", c.in_channels}};
}

/// Residual classifier with torchvision parameter naming and ordering
/// (conv1, bn1, layer1.0.conv1, ..., fc), batch norm in frozen-statistics form.
/// Registry: layer1..layer4; the stem is not hookable.
inline Classifier build_resnet(const ResNetConfig& cfg) {
  if (cfg.blocks.size() != 4) throw ValidationError("resnet: expected four stages");
  const int w = cfg.base_width;
  Classifier net(to_json(cfg), InputSpec{cfg.in_channels, cfg.image_size, cfg.image_size, true, 8}, cfg.num_classes,
                 8 * w);
  auto stem = std::make_unique<nn::Sequential>();
  stem->emplace<nn::Conv2d>("conv1", cfg.in_channels, w, 7, 2, 3, false);
  stem->emplace<nn::BatchNorm2d>("bn1", w);
  stem->emplace<nn::ReLU>();
  stem->emplace<nn::MaxPool2d>(3, 2, 1);
  net.add_stage("stem", std::move(stem), false);
  int in = w;
  for (int s = 0; s < 4; ++s) {
    const int out = w << s;
    const std::string name = "layer" + std::to_string(s + 1);
    auto seq = std::make_unique<nn::Sequential>();
    for (int b = 0; b < cfg.blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      seq->emplace<nn::BasicBlock>(name + "." + std::to_string(b), in, out, stride);
      in = out;
    }
    net.add_stage(name, std::move(seq));
  }
  return net;
}

inline Classifier resnet18(std::uint64_t seed, ResNetConfig cfg = {}) {
  cfg.blocks = {2, 2, 2, 2};
  Classifier net = build_resnet(cfg);
  Rng rng(seed);
  for (nn::Param* p : net.params()) {
    const auto& n = p->name;
    if (n.ends_with(".running_mean") || n.ends_with(".running_var") || n.ends_with(".bias")) continue;
    if (p->shape.size() == 4) {
      const double fan_in = static_cast<double>(p->shape[1] * p->shape[2] * p->shape[3]);
      detail::init_uniform(*p, std::sqrt(6.0 / fan_in), rng);
    }
  }
  detail::init_linear(net.head(), rng);
  return net;
}

/// Reconstructs an architecture (zero weights) from its JSON description.
inline Classifier build_architecture(const nlohmann::json& arch, int num_classes, const InputSpec& input) {
  const std::string id = arch.at("id").get<std::string>();
  if (id == "reference-cnn") {
    ReferenceConfig c;
    c.widths = arch.at("widths").get<std::vector<int>>();
    c.convs_per_stage = arch.value("convs_per_stage", 1);
    c.in_channels = arch.value("in_channels", input.channels);
    c.num_classes = num_classes;
    c.image_size = input.height;
    return build_reference(c);
  }
  if (id == "resnet" || id == "resnet18") {
    ResNetConfig c;
    c.blocks = arch.value("blocks", std::vector<int>{2, 2, 2, 2});
    c.base_width = arch.value("base_width", 64);
    c.in_channels = arch.value("in_channels", input.channels);
    c.num_classes = num_classes;
    c.image_size = input.height;
    return build_resnet(c);
  }
  throw FormatError("unknown architecture id '" + id + "'");
}

}  // namespace cfdcam
