#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfdcam/data.hpp"
#include "cfdcam/error.hpp"
#include "cfdcam/volume_io.hpp"

namespace cfdcam {

// Dataset manifest (manifest.json in the dataset directory):
//
//   {"format": "cfdcam-dataset/1", "name", "modalities": [...],
//    "split": {"ratios": [8,1,1], "seed"},
//    "normalization": "minmax" | "zscore" | "none",
//    "labels": "labels.csv",
//    "cases": [{"case_id", "split": "train"|"val"|"test", "depth", "height", "width",
//               "volumes": {"<modality>": path}, "mask": path | null}]}
//
// Relative paths resolve against the manifest directory. labels.csv lists
// case_id,slice_index,modality,label for every slice and is the only label
// source the training path reads.

inline constexpr const char* kDatasetFormat = "cfdcam-dataset/1";

struct CaseEntry {
  std::string case_id;
  std::string split;
  int depth = 0, height = 0, width = 0;
  std::map<Modality, std::filesystem::path> volumes;
  std::optional<std::filesystem::path> mask;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory holding manifest.json
  std::string name;
  std::vector<Modality> modalities;
  SplitSpec split;
  Normalization normalization = Normalization::minmax;
  std::filesystem::path labels = "labels.csv";
  std::vector<CaseEntry> cases;

  std::filesystem::path resolve(const std::filesystem::path& p) const { return p.is_absolute() ? p : root / p; }

  std::size_t total_slices() const {
    std::size_t n = 0;
    for (const auto& c : cases) n += static_cast<std::size_t>(c.depth) * c.volumes.size();
    return n;
  }
};

inline std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::minmax: return "minmax";
    case Normalization::zscore: return "zscore";
  }
  return "?";
}

inline Normalization parse_normalization(const std::string& s) {
  if (s == "none") return Normalization::none;
  if (s == "minmax") return Normalization::minmax;
  if (s == "zscore") return Normalization::zscore;
  throw ValidationError("unknown normalization '" + s + "'");
}

inline void write_manifest(const DatasetManifest& m) {
  nlohmann::json cases = nlohmann::json::array();
  for (const auto& c : m.cases) {
    nlohmann::json vols = nlohmann::json::object();
    for (const auto& [mod, p] : c.volumes) vols[to_string(mod)] = p.generic_string();
    cases.push_back({{"case_id", c.case_id},
                     {"split", c.split},
                     {"depth", c.depth},
                     {"height", c.height},
                     {"width", c.width},
                     {"volumes", vols},
                     {"mask", c.mask ? nlohmann::json(c.mask->generic_string()) : nlohmann::json(nullptr)}});
  }
  std::vector<std::string> mods;
  for (Modality mod : m.modalities) mods.push_back(to_string(mod));
  nlohmann::json j = {{"format", kDatasetFormat},
                      {"name", m.name},
                      {"modalities", mods},
                      {"split", {{"ratios", m.split.ratios}, {"seed", m.split.seed}}},
                      {"normalization", to_string(m.normalization)},
                      {"labels", m.labels.generic_string()},
                      {"cases", cases}};
  std::ofstream os(m.root / "manifest.json");
  if (!os) throw IoError("cannot write " + (m.root / "manifest.json").string());
  os << j.dump(2) << '\n';
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset manifest " + path.string());
  DatasetManifest m;
  m.root = dir;
  try {
    nlohmann::json j;
    is >> j;
    if (j.at("format").get<std::string>() != kDatasetFormat) throw FormatError("unsupported dataset manifest format");
    m.name = j.at("name").get<std::string>();
    for (const auto& s : j.at("modalities")) m.modalities.push_back(parse_modality(s.get<std::string>()));
    m.split.ratios = j.at("split").at("ratios").get<std::array<double, 3>>();
    m.split.seed = j.at("split").at("seed").get<std::uint64_t>();
    m.normalization = parse_normalization(j.value("normalization", std::string("minmax")));
    m.labels = j.value("labels", std::string("labels.csv"));
    for (const auto& c : j.at("cases")) {
      CaseEntry e;
      e.case_id = c.at("case_id").get<std::string>();
      e.split = c.at("split").get<std::string>();
      e.depth = c.at("depth").get<int>();
      e.height = c.at("height").get<int>();
      e.width = c.at("width").get<int>();
      for (const auto& [k, v] : c.at("volumes").items()) e.volumes[parse_modality(k)] = v.get<std::string>();
      if (c.contains("mask") && !c.at("mask").is_null()) e.mask = c.at("mask").get<std::string>();
      m.cases.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

inline void write_labels_csv(const std::filesystem::path& path, const LabelTable& labels) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "case_id,slice_index,modality,label\n";
  for (const auto& [key, label] : labels)
    os << std::get<0>(key) << ',' << std::get<1>(key) << ',' << to_string(std::get<2>(key)) << ',' << label << '\n';
}

inline LabelTable read_labels_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open labels file " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "case_id,slice_index,modality,label")
    throw FormatError(path.string() + ": unexpected header");
  LabelTable t;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, z, mod, label;
    if (!std::getline(ss, id, ',') || !std::getline(ss, z, ',') || !std::getline(ss, mod, ',') ||
        !std::getline(ss, label))
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    try {
      const int lab = std::stoi(label);
      if (lab != 0 && lab != 1) throw FormatError("label must be 0 or 1");
      t[{id, std::stoi(z), parse_modality(mod)}] = lab;
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return t;
}

namespace detail {

inline std::vector<const CaseEntry*> cases_in(const DatasetManifest& m, const std::string& split) {
  if (split != "train" && split != "val" && split != "test" && split != "heldout" && split != "all")
    throw ValidationError("unknown split '" + split + "'");
  std::vector<const CaseEntry*> out;
  for (const auto& c : m.cases) {
    const bool take = split == "all" || c.split == split || (split == "heldout" && c.split != "train");
    if (take) out.push_back(&c);
  }
  return out;
}

}  // namespace detail

/// Training-path loader: image volumes plus labels.csv. Never opens a mask file.
inline std::vector<SliceRecord> load_training_slices(const DatasetManifest& m, Modality modality,
                                                     const std::string& split) {
  const LabelTable labels = read_labels_csv(m.resolve(m.labels));
  std::vector<SliceRecord> out;
  for (const CaseEntry* c : detail::cases_in(m, split)) {
    const auto it = c->volumes.find(modality);
    if (it == c->volumes.end()) throw ValidationError("case " + c->case_id + " lacks " + to_string(modality));
    VolumeRecord rec{c->case_id, {}, std::nullopt};
    rec.volumes.emplace(modality, load_volume(m.resolve(it->second)));
    auto sliced = slice_volume(rec, modality, &labels, {m.normalization, 1});
    for (auto& s : sliced.slices) out.push_back(std::move(s));
  }
  return out;
}

/// Evaluation-path loader: slices with their ground-truth masks.
inline std::vector<EvalRecord> load_eval_records(const DatasetManifest& m, Modality modality,
                                                 const std::string& split, int min_positive_pixels = 1) {
  std::vector<EvalRecord> out;
  for (const CaseEntry* c : detail::cases_in(m, split)) {
    if (!c->mask) throw ValidationError("case " + c->case_id + " has no ground-truth mask");
    const auto it = c->volumes.find(modality);
    if (it == c->volumes.end()) throw ValidationError("case " + c->case_id + " lacks " + to_string(modality));
    VolumeRecord rec{c->case_id, {}, load_volume(m.resolve(*c->mask))};
    rec.volumes.emplace(modality, load_volume(m.resolve(it->second)));
    auto sliced = slice_volume(rec, modality, nullptr, {m.normalization, min_positive_pixels});
    for (auto& e : sliced.eval) out.push_back(std::move(e));
  }
  return out;
}

/// Source of cases for ingestion: in-memory records (synthetic) or files on disk.
struct CaseSource {
  std::string case_id;
  std::map<Modality, std::filesystem::path> volume_paths;
  std::optional<std::filesystem::path> mask_path;
};

/// Scans a BraTS-style root: one directory per case containing
/// <case>_t1, _t1ce, _t2, _flair and _seg NIfTI files.
inline std::vector<CaseSource> scan_brats_root(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
  static const std::pair<const char*, Modality> suffixes[] = {
      {"_t1", Modality::T1}, {"_t1ce", Modality::T1CE}, {"_t2", Modality::T2}, {"_flair", Modality::FLAIR}};
  std::vector<CaseSource> out;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    CaseSource c{entry.path().filename().string(), {}, std::nullopt};
    for (const auto& f : std::filesystem::directory_iterator(entry.path())) {
      if (!is_nifti_path(f.path())) continue;
      std::string stem = f.path().filename().string();
      stem = stem.substr(0, stem.find(".nii"));
      for (const auto& [suffix, mod] : suffixes)
        if (stem.ends_with(suffix)) c.volume_paths[mod] = f.path();
      if (stem.ends_with("_seg")) c.mask_path = f.path();
    }
    if (!c.volume_paths.empty()) out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
  return out;
}

namespace detail {

inline std::string assign_split(const CaseSplits& s, const std::string& id) {
  if (std::binary_search(s.train.begin(), s.train.end(), id)) return "train";
  if (std::binary_search(s.val.begin(), s.val.end(), id)) return "val";
  return "test";
}

inline std::vector<std::string> ids_of(const auto& items) {
  std::vector<std::string> ids;
  for (const auto& i : items) ids.push_back(i.case_id);
  return ids;
}

}  // namespace detail

/// Writes in-memory volumes in the raw format plus manifest and labels.
inline DatasetManifest ingest_records(const std::vector<VolumeRecord>& records, const std::string& name,
                                      const std::vector<Modality>& modalities, const SplitSpec& split,
                                      Normalization normalization, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const CaseSplits s = split_cases(detail::ids_of(records), split);
  DatasetManifest m{dir, name, modalities, split, normalization, "labels.csv", {}};
  LabelTable labels;
  for (const auto& rec : records) {
    rec.validate();
    const Volume& ref = rec.volumes.begin()->second;
    CaseEntry e{rec.case_id, detail::assign_split(s, rec.case_id), ref.depth, ref.height, ref.width, {}, {}};
    const auto case_dir = std::filesystem::path("cases") / rec.case_id;
    std::filesystem::create_directories(dir / case_dir);
    for (Modality mod : modalities) {
      const auto it = rec.volumes.find(mod);
      if (it == rec.volumes.end()) throw ValidationError("case " + rec.case_id + " lacks " + to_string(mod));
      const auto rel = case_dir / (to_string(mod) + ".raw");
      save_raw(dir / rel, it->second);
      e.volumes[mod] = rel;
      const auto sliced = slice_volume(rec, mod, nullptr, {Normalization::none, 1});
      for (const auto& sl : sliced.slices) labels[{rec.case_id, sl.slice_index, mod}] = sl.label;
    }
    if (rec.mask) {
      const auto rel = case_dir / "mask.raw";
      save_raw(dir / rel, *rec.mask);
      e.mask = rel;
    }
    m.cases.push_back(std::move(e));
  }
  write_labels_csv(dir / "labels.csv", labels);
  write_manifest(m);
  return m;
}

/// Indexes on-disk volumes in place (no copy) and derives labels from masks,
/// or takes them from `external_labels` for mask-free cases.
inline DatasetManifest ingest_sources(const std::vector<CaseSource>& sources, const std::string& name,
                                      const std::vector<Modality>& modalities, const SplitSpec& split,
                                      Normalization normalization, const std::filesystem::path& dir,
                                      const LabelTable* external_labels = nullptr) {
  std::filesystem::create_directories(dir);
  const CaseSplits s = split_cases(detail::ids_of(sources), split);
  DatasetManifest m{dir, name, modalities, split, normalization, "labels.csv", {}};
  LabelTable labels;
  for (const auto& src : sources) {
    CaseEntry e{src.case_id, detail::assign_split(s, src.case_id), 0, 0, 0, {}, {}};
    std::optional<Volume> mask;
    if (src.mask_path) mask = load_volume(*src.mask_path);
    for (Modality mod : modalities) {
      const auto it = src.volume_paths.find(mod);
      if (it == src.volume_paths.end()) throw ValidationError("case " + src.case_id + " lacks " + to_string(mod));
      VolumeRecord rec{src.case_id, {}, mask};
      rec.volumes.emplace(mod, load_volume(it->second));
      const Volume& v = rec.volumes.at(mod);
      e.depth = v.depth;
      e.height = v.height;
      e.width = v.width;
      const auto sliced = slice_volume(rec, mod, external_labels, {Normalization::none, 1});
      for (const auto& sl : sliced.slices) labels[{src.case_id, sl.slice_index, mod}] = sl.label;
      e.volumes[mod] = std::filesystem::absolute(it->second);
    }
    if (src.mask_path) e.mask = std::filesystem::absolute(*src.mask_path);
    m.cases.push_back(std::move(e));
  }
  write_labels_csv(dir / "labels.csv", labels);
  write_manifest(m);
  return m;
}

}  // namespace cfdcam
