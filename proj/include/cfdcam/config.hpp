#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfdcam/cam.hpp"
#include "cfdcam/data.hpp"
#include "cfdcam/dataset.hpp"
#include "cfdcam/error.hpp"
#include "cfdcam/model.hpp"
#include "cfdcam/multiscale.hpp"
#include "cfdcam/train.hpp"

namespace cfdcam {

// Run configuration (JSON). Every object rejects keys it does not know.
//
//   {
//     "dataset": {"name", "kind": "synthetic" | "brats" | "list",
//                 "synthetic": {...SynthSpec fields...},   // kind = synthetic
//                 "root": path,                             // kind = brats
//                 "cases": [{"case_id", "volumes": {"T1": path, ...}, "mask": path}],
//                 "labels": path},                          // optional labels.csv for mask-free cases
//     "modalities": ["T2-FLAIR", ...],
//     "methods": ["gradcam", "scorecam", "layercam", "cfdcam"],
//     "scales": {"factors": [1, 2], "fusion": "mean" | "max"},
//     "threshold": 0.5,
//     "normalization": "minmax" | "zscore" | "none",
//     "split": {"ratios": [8, 1, 1], "seed": 1},
//     "train": {...TrainConfig fields...},
//     "model": {"architecture": "reference-cnn" | "resnet18" | "resnet", "widths", "convs_per_stage",
//               "blocks", "base_width", "init_seed", "checkpoint"},
//     "cam": {"batch_size", "target_layer", "layercam_layers", "weighting", "target_class"},
//     "eval": {"split": "test" | "val" | "heldout" | "all", "positive_only": true, "max_slices": 0},
//     "output_dir": "out",
//     "seed": 0
//   }

enum class DatasetKind { synthetic, brats, list };

struct ListedCase {
  std::string case_id;
  std::map<Modality, std::filesystem::path> volumes;
  std::optional<std::filesystem::path> mask;
};

struct DatasetConfig {
  std::string name = "synthetic";
  DatasetKind kind = DatasetKind::synthetic;
  SynthSpec synthetic;
  std::filesystem::path root;
  std::vector<ListedCase> cases;
  std::optional<std::filesystem::path> labels;
};

struct ModelConfig {
  std::string architecture = "reference-cnn";
  std::vector<int> widths{8, 16, 16};
  int convs_per_stage = 1;
  std::vector<int> blocks{2, 2, 2, 2};
  int base_width = 64;
  std::uint64_t init_seed = 7;
  std::optional<std::filesystem::path> checkpoint;
};

struct CamConfig {
  int batch_size = 8;
  std::string target_layer;  // empty: last registered layer
  std::vector<std::string> layercam_layers;
  Weighting weighting = Weighting::confidence;
  int target_class = 1;
};

struct EvalConfig {
  std::string split = "test";
  bool positive_only = true;
  int max_slices = 0;  // 0: no limit
};

struct RunConfig {
  DatasetConfig dataset;
  std::vector<Modality> modalities{Modality::FLAIR};
  std::vector<CamMethod> methods{CamMethod::gradcam, CamMethod::scorecam, CamMethod::layercam, CamMethod::cfdcam};
  ScaleSpec scales;
  double threshold = 0.5;
  Normalization normalization = Normalization::minmax;
  SplitSpec split;
  TrainConfig train;
  ModelConfig model;
  CamConfig cam;
  EvalConfig eval;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  CamRequest cam_request(CamMethod method) const {
    CamRequest r;
    r.method = method;
    r.target_class = cam.target_class;
    r.weighting = cam.weighting;
    r.batch_size = cam.batch_size;
    if (method == CamMethod::layercam && !cam.layercam_layers.empty())
      r.layers = cam.layercam_layers;
    else if (!cam.target_layer.empty())
      r.layers = {cam.target_layer};
    return r;
  }
};

namespace detail {

// Walks one JSON object, handing out typed fields and refusing leftovers.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type");
    }
  }

  template <class Fn>
  void with(const std::string& key, Fn&& fn) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    fn(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.contains(key)) throw ConfigError(path_ + ": unknown key '" + key + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class T, class Parse>
T parse_enum(const nlohmann::json& j, const std::string& path, Parse&& parse) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  try {
    return parse(j.get<std::string>());
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

template <class T, class Parse>
std::vector<T> parse_enum_list(const nlohmann::json& j, const std::string& path, Parse&& parse) {
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array");
  std::vector<T> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    T v = parse_enum<T>(j[i], path + "[" + std::to_string(i) + "]", parse);
    if (std::find(out.begin(), out.end(), v) != out.end()) throw ConfigError(path + ": duplicate entry");
    out.push_back(v);
  }
  return out;
}

inline void read_synth(const nlohmann::json& j, const std::string& path, SynthSpec& s) {
  ObjectReader r(j, path);
  r.get("n_cases", s.n_cases);
  r.get("seed", s.seed);
  r.get("image_size", s.image_size);
  r.get("slices_per_case", s.slices_per_case);
  r.get("tumor_probability", s.tumor_probability);
  r.get("min_radius", s.min_radius);
  r.get("max_radius", s.max_radius);
  r.get("min_slice_radius", s.min_slice_radius);
  r.get("min_contrast", s.min_contrast);
  r.get("max_contrast", s.max_contrast);
  r.get("texture_amplitude", s.texture_amplitude);
  r.get("noise_sigma", s.noise_sigma);
  r.get("sigma_ratio", s.sigma_ratio);
  r.get("marker_level", s.marker_level);
  r.with("modality", [&](const auto& v, const auto& p) { s.modality = parse_enum<Modality>(v, p, parse_modality); });
  r.finish();
  if (s.n_cases < 10) throw ConfigError(path + ".n_cases: need at least 10");
  if (s.image_size < 8 || s.slices_per_case < 2) throw ConfigError(path + ": image_size >= 8 and slices_per_case >= 2 required");
  if (!(s.min_radius > 0 && s.min_radius <= s.max_radius)) throw ConfigError(path + ": bad radius range");
  if (!(s.min_contrast <= s.max_contrast)) throw ConfigError(path + ": bad contrast range");
  if (!(s.tumor_probability >= 0 && s.tumor_probability <= 1)) throw ConfigError(path + ".tumor_probability: must be in [0,1]");
}

inline ListedCase read_listed_case(const nlohmann::json& j, const std::string& path) {
  ListedCase c;
  ObjectReader r(j, path);
  r.get("case_id", c.case_id);
  r.with("volumes", [&](const nlohmann::json& v, const std::string& p) {
    if (!v.is_object() || v.empty()) throw ConfigError(p + ": expected a non-empty object");
    for (const auto& [key, value] : v.items()) {
      if (!value.is_string()) throw ConfigError(p + "." + key + ": expected a path string");
      c.volumes[parse_enum<Modality>(nlohmann::json(key), p, parse_modality)] = value.get<std::string>();
    }
  });
  r.with("mask", [&](const nlohmann::json& v, const std::string& p) {
    if (v.is_null()) return;
    if (!v.is_string()) throw ConfigError(p + ": expected a path string");
    c.mask = v.get<std::string>();
  });
  r.finish();
  if (c.case_id.empty()) throw ConfigError(path + ".case_id: required");
  if (c.volumes.empty()) throw ConfigError(path + ".volumes: required");
  return c;
}

inline void read_dataset(const nlohmann::json& j, const std::string& path, DatasetConfig& d) {
  ObjectReader r(j, path);
  r.get("name", d.name);
  r.with("kind", [&](const nlohmann::json& v, const std::string& p) {
    const std::string k = v.is_string() ? v.get<std::string>() : "";
    if (k == "synthetic") d.kind = DatasetKind::synthetic;
    else if (k == "brats") d.kind = DatasetKind::brats;
    else if (k == "list") d.kind = DatasetKind::list;
    else throw ConfigError(p + ": expected synthetic, brats or list");
  });
  r.with("synthetic", [&](const auto& v, const auto& p) { read_synth(v, p, d.synthetic); });
  r.with("root", [&](const nlohmann::json& v, const std::string& p) {
    if (!v.is_string()) throw ConfigError(p + ": expected a path string");
    d.root = v.get<std::string>();
  });
  r.with("cases", [&](const nlohmann::json& v, const std::string& p) {
    if (!v.is_array()) throw ConfigError(p + ": expected an array");
    for (std::size_t i = 0; i < v.size(); ++i) d.cases.push_back(read_listed_case(v[i], p + "[" + std::to_string(i) + "]"));
  });
  r.with("labels", [&](const nlohmann::json& v, const std::string& p) {
    if (!v.is_string()) throw ConfigError(p + ": expected a path string");
    d.labels = v.get<std::string>();
  });
  r.finish();
  if (d.name.empty()) throw ConfigError(path + ".name: must not be empty");
  if (d.kind == DatasetKind::brats && d.root.empty()) throw ConfigError(path + ".root: required for brats datasets");
  if (d.kind == DatasetKind::list && d.cases.empty()) throw ConfigError(path + ".cases: required for list datasets");
}

inline void read_train(const nlohmann::json& j, const std::string& path, TrainConfig& t) {
  ObjectReader r(j, path);
  r.get("initial_lr", t.initial_lr);
  r.get("min_lr", t.min_lr);
  r.get("weight_decay", t.weight_decay);
  r.get("temperature", t.temperature);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("adam_eps", t.adam_eps);
  r.get("pretrain_epochs", t.pretrain_epochs);
  r.get("finetune_epochs", t.finetune_epochs);
  r.get("batch_size", t.batch_size);
  r.get("projection_dim", t.projection_dim);
  r.get("accuracy_gate", t.accuracy_gate);
  r.get("min_gain", t.min_gain);
  r.get("max_gain", t.max_gain);
  r.finish();
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void read_model(const nlohmann::json& j, const std::string& path, ModelConfig& m) {
  ObjectReader r(j, path);
  r.get("architecture", m.architecture);
  r.get("widths", m.widths);
  r.get("convs_per_stage", m.convs_per_stage);
  r.get("blocks", m.blocks);
  r.get("base_width", m.base_width);
  r.get("init_seed", m.init_seed);
  r.with("checkpoint", [&](const nlohmann::json& v, const std::string& p) {
    if (v.is_null()) return;
    if (!v.is_string()) throw ConfigError(p + ": expected a path string");
    m.checkpoint = v.get<std::string>();
  });
  r.finish();
  if (m.architecture != "reference-cnn" && m.architecture != "resnet18" && m.architecture != "resnet")
    throw ConfigError(path + ".architecture: expected reference-cnn, resnet18 or resnet");
  if (m.widths.empty() || m.convs_per_stage < 1 || m.base_width < 1 || m.blocks.size() != 4)
    throw ConfigError(path + ": bad layer sizes");
  for (int w : m.widths)
    if (w < 1) throw ConfigError(path + ".widths: must be positive");
}

inline void read_cam(const nlohmann::json& j, const std::string& path, CamConfig& c) {
  ObjectReader r(j, path);
  r.get("batch_size", c.batch_size);
  r.get("target_layer", c.target_layer);
  r.get("layercam_layers", c.layercam_layers);
  r.get("target_class", c.target_class);
  r.with("weighting", [&](const auto& v, const auto& p) { c.weighting = parse_enum<Weighting>(v, p, parse_weighting); });
  r.finish();
  if (c.batch_size < 1) throw ConfigError(path + ".batch_size: must be >= 1");
  if (c.target_class < 0) throw ConfigError(path + ".target_class: must be >= 0");
}

inline void read_eval(const nlohmann::json& j, const std::string& path, EvalConfig& e) {
  ObjectReader r(j, path);
  r.get("split", e.split);
  r.get("positive_only", e.positive_only);
  r.get("max_slices", e.max_slices);
  r.finish();
  if (e.split != "train" && e.split != "val" && e.split != "test" && e.split != "heldout" && e.split != "all")
    throw ConfigError(path + ".split: expected train, val, test, heldout or all");
  if (e.max_slices < 0) throw ConfigError(path + ".max_slices: must be >= 0");
}

}  // namespace detail

/// Validates and converts a JSON document; any schema problem is a ConfigError.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  detail::ObjectReader r(j, "config");
  r.with("dataset", [&](const auto& v, const auto& p) { detail::read_dataset(v, p, c.dataset); });
  r.with("modalities", [&](const auto& v, const auto& p) {
    c.modalities = detail::parse_enum_list<Modality>(v, p, parse_modality);
  });
  r.with("methods", [&](const auto& v, const auto& p) {
    c.methods = detail::parse_enum_list<CamMethod>(v, p, parse_method);
  });
  r.with("scales", [&](const nlohmann::json& v, const std::string& p) {
    detail::ObjectReader s(v, p);
    s.get("factors", c.scales.factors);
    s.with("fusion", [&](const auto& f, const auto& fp) { c.scales.fusion = detail::parse_enum<Fusion>(f, fp, parse_fusion); });
    s.finish();
    try {
      c.scales.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(p + ": " + e.what());
    }
  });
  r.get("threshold", c.threshold);
  r.with("normalization", [&](const auto& v, const auto& p) {
    c.normalization = detail::parse_enum<Normalization>(v, p, parse_normalization);
  });
  r.with("split", [&](const nlohmann::json& v, const std::string& p) {
    detail::ObjectReader s(v, p);
    s.get("ratios", c.split.ratios);
    s.get("seed", c.split.seed);
    s.finish();
    for (double x : c.split.ratios)
      if (!(x > 0.0)) throw ConfigError(p + ".ratios: entries must be positive");
  });
  r.with("train", [&](const auto& v, const auto& p) { detail::read_train(v, p, c.train); });
  r.with("model", [&](const auto& v, const auto& p) { detail::read_model(v, p, c.model); });
  r.with("cam", [&](const auto& v, const auto& p) { detail::read_cam(v, p, c.cam); });
  r.with("eval", [&](const auto& v, const auto& p) { detail::read_eval(v, p, c.eval); });
  r.with("output_dir", [&](const nlohmann::json& v, const std::string& p) {
    if (!v.is_string() || v.get<std::string>().empty()) throw ConfigError(p + ": expected a path string");
    c.output_dir = v.get<std::string>();
  });
  r.get("seed", c.seed);
  r.finish();
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("config.threshold: must be in (0,1)");
  if (c.dataset.kind == DatasetKind::synthetic &&
      (c.modalities.size() != 1 || c.modalities[0] != c.dataset.synthetic.modality))
    throw ConfigError("config.modalities: synthetic datasets carry exactly the synthetic modality");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace cfdcam
