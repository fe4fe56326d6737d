#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfdcam/error.hpp"
#include "cfdcam/model.hpp"

namespace cfdcam {

// Checkpoint directory layout:
//
//   <dir>/manifest.json   {"format", "architecture", "num_classes", "input",
//                          "layer_registry", "weights", "dtype", "parameters"}
//   <dir>/weights.bin     every parameter in manifest order, little-endian,
//                          row-major, as float32 or float64 per "dtype"
//
// Parameter names and order follow the torchvision state_dict convention for
// residual networks (num_batches_tracked omitted), so an externally trained
// model can be exported by concatenating its tensors.

inline constexpr const char* kCheckpointFormat = "cfdcam-checkpoint/1";

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("unexpected end of file");
  return v;
}

}  // namespace detail

enum class WeightType { float32, float64 };

inline void save_checkpoint(const std::filesystem::path& dir, const Classifier& model,
                            WeightType dtype = WeightType::float64) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  nlohmann::json params = nlohmann::json::array();
  for (const nn::Param* p : model.params()) params.push_back({{"name", p->name}, {"shape", p->shape}});
  const auto& in = model.input_spec();
  nlohmann::json manifest = {
      {"format", kCheckpointFormat},
      {"architecture", model.architecture()},
      {"num_classes", model.num_classes()},
      {"input", {{"channels", in.channels}, {"height", in.height}, {"width", in.width}}},
      {"layer_registry", model.layer_registry()},
      {"weights", "weights.bin"},
      {"dtype", dtype == WeightType::float32 ? "float32" : "float64"},
      {"parameters", params},
  };
  {
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
  }
  std::ofstream os(dir / "weights.bin", std::ios::binary);
  if (!os) throw IoError("cannot write " + (dir / "weights.bin").string());
  for (const nn::Param* p : model.params())
    for (double v : p->value) {
      if (dtype == WeightType::float32)
        detail::write_le(os, static_cast<float>(v));
      else
        detail::write_le(os, v);
    }
  if (!os) throw IoError("short write to weights.bin");
}

inline Classifier load_checkpoint_model(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw IoError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json m;
  try {
    ms >> m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
  try {
    if (m.at("format").get<std::string>() != kCheckpointFormat) throw FormatError("unsupported checkpoint format");
    const auto& in = m.at("input");
    InputSpec spec{in.at("channels").get<int>(), in.at("height").get<int>(), in.at("width").get<int>(), true, 8};
    Classifier model = build_architecture(m.at("architecture"), m.at("num_classes").get<int>(), spec);
    if (m.contains("layer_registry")) model.set_layer_registry(m.at("layer_registry").get<std::vector<std::string>>());

    auto params = model.params();
    const auto& listed = m.at("parameters");
    if (listed.size() != params.size())
      throw FormatError("checkpoint lists " + std::to_string(listed.size()) + " parameters, architecture has " +
                        std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (listed[i].at("name").get<std::string>() != params[i]->name ||
          listed[i].at("shape").get<std::vector<int>>() != params[i]->shape)
        throw FormatError("checkpoint parameter " + std::to_string(i) + " does not match '" + params[i]->name + "'");
    }

    const std::string dtype = m.value("dtype", std::string("float32"));
    if (dtype != "float32" && dtype != "float64") throw FormatError("unsupported weight dtype " + dtype);
    const auto wpath = dir / m.value("weights", std::string("weights.bin"));
    std::ifstream ws(wpath, std::ios::binary);
    if (!ws) throw IoError("cannot open " + wpath.string());
    for (nn::Param* p : params)
      for (double& v : p->value) v = dtype == "float32" ? detail::read_le<float>(ws) : detail::read_le<double>(ws);
    ws.peek();
    if (!ws.eof()) throw FormatError("trailing bytes in " + wpath.string());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

inline ClassifierHandle load_checkpoint(const std::filesystem::path& dir) {
  return std::make_shared<const Classifier>(load_checkpoint_model(dir));
}

}  // namespace cfdcam
