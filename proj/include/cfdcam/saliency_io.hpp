#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cfdcam/cam.hpp"
#include "cfdcam/error.hpp"

namespace cfdcam {

struct SaliencyMeta {
  std::string method;
  int target_class = 1;
  std::string layer;
  std::string weighting;  // empty unless method is cfdcam

  friend bool operator==(const SaliencyMeta&, const SaliencyMeta&) = default;
};

/// Writes <stem>.bin (little-endian float32, row-major) and <stem>.json
/// {height, width, method, class, layer, weighting}.
inline void save_saliency(const std::filesystem::path& stem, const SaliencyMap& map, const SaliencyMeta& meta) {
  static_assert(std::endian::native == std::endian::little);
  const auto bin = std::filesystem::path(stem.string() + ".bin");
  const auto side = std::filesystem::path(stem.string() + ".json");
  {
    std::ofstream os(bin, std::ios::binary);
    if (!os) throw IoError("cannot write " + bin.string());
    for (double v : map.values()) {
      const float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    if (!os) throw IoError("short write to " + bin.string());
  }
  nlohmann::json j = {{"height", map.height()}, {"width", map.width()},   {"method", meta.method},
                      {"class", meta.target_class}, {"layer", meta.layer}, {"weighting", meta.weighting}};
  std::ofstream os(side);
  if (!os) throw IoError("cannot write " + side.string());
  os << j.dump(2) << '\n';
}

inline std::pair<SaliencyMap, SaliencyMeta> load_saliency(const std::filesystem::path& stem) {
  const auto side = std::filesystem::path(stem.string() + ".json");
  const auto bin = std::filesystem::path(stem.string() + ".bin");
  std::ifstream js(side);
  if (!js) throw IoError("cannot open " + side.string());
  nlohmann::json j;
  SaliencyMeta meta;
  int h = 0, w = 0;
  try {
    js >> j;
    h = j.at("height").get<int>();
    w = j.at("width").get<int>();
    meta = {j.at("method").get<std::string>(), j.at("class").get<int>(), j.at("layer").get<std::string>(),
            j.value("weighting", std::string{})};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  std::ifstream is(bin, std::ios::binary);
  if (!is) throw IoError("cannot open " + bin.string());
  Grid g(h, w);
  for (double& v : g.values()) {
    float f;
    is.read(reinterpret_cast<char*>(&f), sizeof f);
    if (!is) throw FormatError(bin.string() + ": payload truncated");
    v = f;
  }
  return {SaliencyMap::from_unit_grid(std::move(g)), meta};
}

using Rgb = std::array<std::uint8_t, 3>;

/// Fixed 256-entry jet lookup: channel = clamp(1.5 − |4t − c|, 0, 1) with
/// c = 3, 2, 1 for red, green, blue, quantized by rounding.
inline const std::array<Rgb, 256>& jet_colormap() {
  static const std::array<Rgb, 256> lut = [] {
    std::array<Rgb, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double x = i / 255.0;
      auto ch = [&](double c) {
        const double v = std::clamp(1.5 - std::abs(4.0 * x - c), 0.0, 1.0);
        return static_cast<std::uint8_t>(std::lround(v * 255.0));
      };
      t[i] = {ch(3.0), ch(2.0), ch(1.0)};
    }
    return t;
  }();
  return lut;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Binary PGM of a [0,1] grid.
inline void write_pgm(const std::filesystem::path& path, const Grid& g) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << g.width() << ' ' << g.height() << "\n255\n";
  for (double v : g.values()) os.put(static_cast<char>(to_byte(v)));
}

/// Binary PPM blending the greyscale image (first channel, assumed in [0,1])
/// with the jet-colored saliency at 50% opacity.
inline void write_overlay_ppm(const std::filesystem::path& path, const ImageTensor& image, const SaliencyMap& map) {
  if (image.height() != map.height() || image.width() != map.width())
    throw ValidationError("write_overlay_ppm: image and map sizes differ");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << map.width() << ' ' << map.height() << "\n255\n";
  const auto& lut = jet_colormap();
  for (std::size_t i = 0; i < map.values().size(); ++i) {
    const int grey = to_byte(image.values()[i]);
    const Rgb& c = lut[to_byte(map.values()[i])];
    for (int k = 0; k < 3; ++k) os.put(static_cast<char>((grey + c[k] + 1) / 2));
  }
}

}  // namespace cfdcam
