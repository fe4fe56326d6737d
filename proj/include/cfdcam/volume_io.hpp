#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "cfdcam/error.hpp"

namespace cfdcam {

/// D×H×W scalar volume, z-major then row-major (x fastest).
struct Volume {
  int depth = 0;
  int height = 0;
  int width = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // z, y, x
  std::vector<float> data;

  Volume() = default;
  Volume(int d, int h, int w, float fill = 0.0f) : depth(d), height(h), width(w) {
    if (d < 0 || h < 0 || w < 0) throw ValidationError("Volume: negative dimension");
    data.assign(static_cast<std::size_t>(d) * h * w, fill);
  }

  std::size_t slice_size() const { return static_cast<std::size_t>(height) * width; }
  float& at(int z, int y, int x) { return data[(static_cast<std::size_t>(z) * height + y) * width + x]; }
  float at(int z, int y, int x) const { return data[(static_cast<std::size_t>(z) * height + y) * width + x]; }
  bool same_shape(const Volume& o) const { return depth == o.depth && height == o.height && width == o.width; }

  friend bool operator==(const Volume&, const Volume&) = default;
};

// ---------------------------------------------------------------------------
// Raw format: one line of JSON {"dims":[D,H,W],"dtype":"float32","order":"row-major"}
// terminated by '\n', then D·H·W little-endian float32 values, x fastest.

inline void save_raw(const std::filesystem::path& path, const Volume& v) {
  static_assert(std::endian::native == std::endian::little);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  nlohmann::json header = {{"dims", {v.depth, v.height, v.width}},
                           {"dtype", "float32"},
                           {"order", "row-major"},
                           {"spacing", v.spacing}};
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!os) throw IoError("short write to " + path.string());
}

inline Volume load_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path.string() + ": missing header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }
  Volume v;
  try {
    const auto dims = h.at("dims").get<std::vector<int>>();
    if (dims.size() != 3 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
      throw FormatError(path.string() + ": dims must be three positive integers");
    if (h.at("dtype").get<std::string>() != "float32") throw FormatError(path.string() + ": dtype must be float32");
    if (h.at("order").get<std::string>() != "row-major") throw FormatError(path.string() + ": order must be row-major");
    v = Volume(dims[0], dims[1], dims[2]);
    if (h.contains("spacing")) v.spacing = h.at("spacing").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed header: " + e.what());
  }
  const auto bytes = static_cast<std::streamsize>(v.data.size() * sizeof(float));
  is.read(reinterpret_cast<char*>(v.data.data()), bytes);
  if (is.gcount() != bytes) throw FormatError(path.string() + ": payload truncated");
  is.peek();
  if (!is.eof()) throw FormatError(path.string() + ": trailing bytes after payload");
  return v;
}

// ---------------------------------------------------------------------------
// NIfTI-1 single-file (.nii, .nii.gz). x varies fastest on disk, which is
// already the canonical D×H×W = (z, y, x) row-major order.

namespace detail {

inline std::vector<unsigned char> read_maybe_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw FormatError(path.string() + ": decompression failed");
  return out;
}

template <class T>
T load_field(const std::vector<unsigned char>& b, std::size_t off, bool swap) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  if (swap) {
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(tmp[i], tmp[sizeof(T) - 1 - i]);
    std::memcpy(&v, tmp, sizeof(T));
  }
  return v;
}

}  // namespace detail

inline Volume load_nifti(const std::filesystem::path& path) {
  const auto b = detail::read_maybe_gz(path);
  if (b.size() < 348) throw FormatError(path.string() + ": shorter than a NIfTI-1 header");
  bool swap = false;
  std::int32_t sizeof_hdr = detail::load_field<std::int32_t>(b, 0, false);
  if (sizeof_hdr != 348) {
    swap = true;
    sizeof_hdr = detail::load_field<std::int32_t>(b, 0, true);
    if (sizeof_hdr != 348) throw FormatError(path.string() + ": not a NIfTI-1 header");
  }
  if (std::memcmp(b.data() + 344, "n+1", 4) != 0)
    throw FormatError(path.string() + ": only single-file NIfTI-1 (magic n+1) is supported");
  std::int16_t dim[8];
  for (int i = 0; i < 8; ++i) dim[i] = detail::load_field<std::int16_t>(b, 40 + 2 * i, swap);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError(path.string() + ": bad dim[0]");
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] != 1) throw FormatError(path.string() + ": volumes with more than three non-singleton dims");
  const int nx = dim[1], ny = dim[0] >= 2 ? dim[2] : 1, nz = dim[0] >= 3 ? dim[3] : 1;
  if (nx < 1 || ny < 1 || nz < 1) throw FormatError(path.string() + ": non-positive dimension");
  const auto datatype = detail::load_field<std::int16_t>(b, 70, swap);
  float pixdim[8];
  for (int i = 0; i < 8; ++i) pixdim[i] = detail::load_field<float>(b, 76 + 4 * i, swap);
  const auto vox_offset = static_cast<std::size_t>(detail::load_field<float>(b, 108, swap));
  const float slope = detail::load_field<float>(b, 112, swap);
  const float inter = detail::load_field<float>(b, 116, swap);

  std::size_t bytes_per = 0;
  switch (datatype) {
    case 2: case 256: bytes_per = 1; break;            // uint8, int8
    case 4: case 512: bytes_per = 2; break;            // int16, uint16
    case 8: case 16: case 768: bytes_per = 4; break;   // int32, float32, uint32
    case 64: bytes_per = 8; break;                     // float64
    default: throw FormatError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
  }
  Volume v(nz, ny, nx);
  auto positive = [](float p) { return std::isfinite(p) && p > 0.0f ? static_cast<double>(p) : 1.0; };
  v.spacing = {positive(pixdim[3]), positive(pixdim[2]), positive(pixdim[1])};
  const std::size_t n = v.data.size();
  if (vox_offset < 348 || b.size() < vox_offset + n * bytes_per)
    throw FormatError(path.string() + ": voxel data truncated");
  const bool scaled = slope != 0.0f && std::isfinite(slope);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = vox_offset + i * bytes_per;
    double x = 0.0;
    switch (datatype) {
      case 2: x = b[off]; break;
      case 256: x = static_cast<std::int8_t>(b[off]); break;
      case 4: x = detail::load_field<std::int16_t>(b, off, swap); break;
      case 512: x = detail::load_field<std::uint16_t>(b, off, swap); break;
      case 8: x = detail::load_field<std::int32_t>(b, off, swap); break;
      case 768: x = detail::load_field<std::uint32_t>(b, off, swap); break;
      case 16: x = detail::load_field<float>(b, off, swap); break;
      case 64: x = detail::load_field<double>(b, off, swap); break;
    }
    if (scaled) x = x * slope + inter;
    v.data[i] = static_cast<float>(x);
  }
  return v;
}

/// Writes a float32 single-file NIfTI-1 (gzip-compressed when the name ends in .gz).
inline void save_nifti(const std::filesystem::path& path, const Volume& v) {
  std::vector<unsigned char> hdr(352, 0);
  auto put = [&](std::size_t off, auto value) { std::memcpy(hdr.data() + off, &value, sizeof(value)); };
  put(0, std::int32_t{348});
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(v.width), static_cast<std::int16_t>(v.height),
                                static_cast<std::int16_t>(v.depth), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(40 + 2 * i, dims[i]);
  put(70, std::int16_t{16});
  put(72, std::int16_t{32});
  const float pixdim[8] = {1.0f, static_cast<float>(v.spacing[2]), static_cast<float>(v.spacing[1]),
                           static_cast<float>(v.spacing[0]), 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) put(76 + 4 * i, pixdim[i]);
  put(108, 352.0f);
  put(112, 1.0f);
  std::memcpy(hdr.data() + 344, "n+1", 4);

  const bool gz = path.string().ends_with(".gz");
  gzFile f = gzopen(path.string().c_str(), gz ? "wb6" : "wbT");
  if (!f) throw IoError("cannot write " + path.string());
  bool ok = gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size())) == static_cast<int>(hdr.size());
  const auto payload = static_cast<unsigned>(v.data.size() * sizeof(float));
  if (payload > 0) ok = ok && gzwrite(f, v.data.data(), payload) == static_cast<int>(payload);
  ok = gzclose(f) == Z_OK && ok;
  if (!ok) throw IoError("short write to " + path.string());
}

inline bool is_nifti_path(const std::filesystem::path& p) {
  const std::string s = p.string();
  return s.ends_with(".nii") || s.ends_with(".nii.gz");
}

/// NIfTI-1 or the raw format, chosen by file extension.
inline Volume load_volume(const std::filesystem::path& path) {
  return is_nifti_path(path) ? load_nifti(path) : load_raw(path);
}

}  // namespace cfdcam
