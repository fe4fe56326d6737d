#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cfdcam/cam.hpp"
#include "cfdcam/checkpoint.hpp"
#include "cfdcam/config.hpp"
#include "cfdcam/data.hpp"
#include "cfdcam/dataset.hpp"
#include "cfdcam/error.hpp"
#include "cfdcam/metrics.hpp"
#include "cfdcam/model.hpp"
#include "cfdcam/multiscale.hpp"
#include "cfdcam/parallel.hpp"
#include "cfdcam/report.hpp"
#include "cfdcam/saliency_io.hpp"
#include "cfdcam/train.hpp"

namespace cfdcam {

enum ExitCode : int { kExitOk = 0, kExitPartial = 1, kExitIo = 2, kExitConfig = 3 };

/// Where a run reads and writes. Intermediate artifacts (dataset, checkpoints)
/// live under `cache`, reports and saliency files under `out`.
struct Workspace {
  std::filesystem::path cache;
  std::filesystem::path out;

  std::filesystem::path dataset_dir() const { return cache / "dataset"; }
  std::filesystem::path checkpoint_dir(Modality m) const { return cache / "checkpoints" / to_string(m); }

  /// CFDCAM_CACHE_DIR overrides the cache location; otherwise it is `out`.
  static Workspace resolve(const std::filesystem::path& out) {
    const char* env = std::getenv("CFDCAM_CACHE_DIR");
    return {env && *env ? std::filesystem::path(env) : out, out};
  }
};

// ---------------------------------------------------------------------------
// ingest

inline DatasetManifest run_ingest(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  DatasetManifest m;
  switch (cfg.dataset.kind) {
    case DatasetKind::synthetic: {
      const auto records = synth_blob_dataset(cfg.dataset.synthetic);
      m = ingest_records(records, cfg.dataset.name, cfg.modalities, cfg.split, cfg.normalization, ws.dataset_dir());
      break;
    }
    case DatasetKind::brats: {
      const auto sources = scan_brats_root(cfg.dataset.root);
      if (sources.empty()) throw IoError("no cases found under " + cfg.dataset.root.string());
      m = ingest_sources(sources, cfg.dataset.name, cfg.modalities, cfg.split, cfg.normalization, ws.dataset_dir());
      break;
    }
    case DatasetKind::list: {
      std::vector<CaseSource> sources;
      for (const auto& c : cfg.dataset.cases) {
        for (const auto& [mod, path] : c.volumes)
          if (!std::filesystem::exists(path)) throw IoError("missing volume " + path.string());
        if (c.mask && !std::filesystem::exists(*c.mask)) throw IoError("missing mask " + c.mask->string());
        sources.push_back({c.case_id, c.volumes, c.mask});
      }
      std::optional<LabelTable> labels;
      if (cfg.dataset.labels) labels = read_labels_csv(*cfg.dataset.labels);
      m = ingest_sources(sources, cfg.dataset.name, cfg.modalities, cfg.split, cfg.normalization, ws.dataset_dir(),
                         labels ? &*labels : nullptr);
      break;
    }
  }
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& c : m.cases) ++counts[c.split == "train" ? 0 : c.split == "val" ? 1 : 2];
  log << "ingested " << m.cases.size() << " cases (" << counts[0] << "/" << counts[1] << "/" << counts[2]
      << " train/val/test), " << m.total_slices() << " slices -> " << ws.dataset_dir().string() << "\n";
  return m;
}

inline DatasetManifest require_manifest(const Workspace& ws) {
  if (!std::filesystem::exists(ws.dataset_dir() / "manifest.json"))
    throw IoError("no dataset manifest in " + ws.dataset_dir().string() + " (run ingest first)");
  return read_manifest(ws.dataset_dir());
}

// ---------------------------------------------------------------------------
// train

inline Classifier initial_model(const RunConfig& cfg, int image_size) {
  if (cfg.model.checkpoint) return load_checkpoint_model(*cfg.model.checkpoint);
  if (cfg.model.architecture == "reference-cnn") {
    ReferenceConfig rc;
    rc.widths = cfg.model.widths;
    rc.convs_per_stage = cfg.model.convs_per_stage;
    rc.image_size = image_size;
    return reference_network(cfg.model.init_seed, rc);
  }
  ResNetConfig rc;
  rc.blocks = cfg.model.blocks;
  rc.base_width = cfg.model.base_width;
  rc.in_channels = 1;
  rc.image_size = image_size;
  if (cfg.model.architecture == "resnet18") return resnet18(cfg.model.init_seed, rc);
  Classifier net = build_resnet(rc);
  Rng rng(cfg.model.init_seed);
  for (nn::Param* p : net.params())
    if (p->shape.size() == 4) {
      const double fan_in = static_cast<double>(p->shape[1] * p->shape[2] * p->shape[3]);
      detail::init_uniform(*p, std::sqrt(6.0 / fan_in), rng);
    }
  detail::init_linear(net.head(), rng);
  return net;
}

inline void write_log_csv(const std::filesystem::path& path, const std::vector<LogEntry>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,lr,loss,accuracy\n";
  char buf[128];
  for (const auto& e : log) {
    if (std::isnan(e.accuracy))
      std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,\n", e.step, e.lr, e.loss);
    else
      std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.6f\n", e.step, e.lr, e.loss, e.accuracy);
    out << buf;
  }
}

struct TrainOutcome {
  Modality modality = Modality::FLAIR;
  double test_accuracy = 0.0;
  bool gate_passed = false;
  bool untrained = false;
};

inline TrainOutcome train_modality(const RunConfig& cfg, const DatasetManifest& m, Modality mod, const Workspace& ws,
                                   std::ostream& log) {
  auto train = load_training_slices(m, mod, "train");
  auto test = load_training_slices(m, mod, "test");
  if (train.empty()) throw ValidationError("no training slices for " + to_string(mod));
  Classifier model = initial_model(cfg, train.front().image.height());
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  TrainOutcome outcome{mod};
  outcome.untrained = tc.pretrain_epochs == 0 && tc.finetune_epochs == 0;

  const auto dir = ws.checkpoint_dir(mod);
  std::filesystem::create_directories(dir);
  const PretrainResult pre = pretrain_supcon(model, train, tc);
  if (tc.pretrain_epochs > 0) {
    write_log_csv(dir / "pretrain_log.csv", pre.log);
    log << to_string(mod) << ": contrastive loss " << pre.initial_loss << " -> " << pre.final_loss << "\n";
  }
  const FinetuneResult fin = finetune_classifier(model, train, test, tc);
  write_log_csv(dir / "train_log.csv", fin.log);
  save_checkpoint(dir, model);
  outcome.test_accuracy = fin.test_accuracy;
  outcome.gate_passed = fin.gate_passed;

  nlohmann::json summary = {{"modality", to_string(mod)},
                            {"train_slices", train.size()},
                            {"test_slices", test.size()},
                            {"test_accuracy", fin.test_accuracy},
                            {"accuracy_gate", tc.accuracy_gate},
                            {"gate_passed", fin.gate_passed}};
  std::ofstream(dir / "train_summary.json") << summary.dump(2) << "\n";

  char buf[160];
  std::snprintf(buf, sizeof buf, "%s: test accuracy %.4f (gate > %.2f: %s)\n", to_string(mod).c_str(),
                fin.test_accuracy, tc.accuracy_gate, fin.gate_passed ? "passed" : "not reached");
  log << buf;
  if (outcome.untrained) log << "warning: zero epochs configured; checkpoint holds untrained weights\n";
  return outcome;
}

/// Trains one classifier per configured modality. Returns 1 if a gate was
/// missed by a run that actually trained.
inline int run_train(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  const DatasetManifest m = require_manifest(ws);
  int code = kExitOk;
  for (Modality mod : cfg.modalities) {
    const TrainOutcome o = train_modality(cfg, m, mod, ws, log);
    if (!o.gate_passed && !o.untrained) code = kExitPartial;
  }
  return code;
}

inline Classifier require_checkpoint(const Workspace& ws, Modality mod) {
  const auto dir = ws.checkpoint_dir(mod);
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw IoError("no checkpoint for " + to_string(mod) + " in " + dir.string() + " (run train first)");
  return load_checkpoint_model(dir);
}

// ---------------------------------------------------------------------------
// explain

struct ExplainRequest {
  std::string case_id;
  int slice_index = 0;
  CamMethod method = CamMethod::cfdcam;
  Modality modality = Modality::FLAIR;
};

inline ImageTensor load_case_slice(const DatasetManifest& m, const std::string& case_id, Modality mod, int z) {
  for (const auto& c : m.cases) {
    if (c.case_id != case_id) continue;
    const auto it = c.volumes.find(mod);
    if (it == c.volumes.end()) throw IoError("case " + case_id + " has no " + to_string(mod) + " volume");
    const Volume v = load_volume(m.resolve(it->second));
    if (z < 0 || z >= v.depth)
      throw IoError("case " + case_id + " has no slice " + std::to_string(z) + " (depth " + std::to_string(v.depth) + ")");
    return apply_normalization(volume_slice(v, z), m.normalization);
  }
  throw IoError("unknown case '" + case_id + "'");
}

inline std::string saliency_stem(const std::string& case_id, int z, Modality mod, CamMethod method) {
  return case_id + "_z" + std::to_string(z) + "_" + to_string(mod) + "_" + to_string(method);
}

/// Writes saliency/<stem>.{bin,json,pgm,ppm} under the output directory.
inline std::filesystem::path run_explain(const RunConfig& cfg, const Workspace& ws, const ExplainRequest& req,
                                         std::ostream& log) {
  const DatasetManifest m = require_manifest(ws);
  const Classifier model = require_checkpoint(ws, req.modality);
  const ImageTensor image = load_case_slice(m, req.case_id, req.modality, req.slice_index);
  const CamRequest cam = cfg.cam_request(req.method);
  const SaliencyMap map = multiscale_cam(cam, model, image, cfg.scales);

  SaliencyMeta meta;
  meta.method = to_string(req.method);
  meta.target_class = cam.target_class;
  const auto layers = resolve_layers(model, cam);
  for (std::size_t i = 0; i < layers.size(); ++i) meta.layer += (i ? "," : "") + layers[i];
  if (req.method == CamMethod::cfdcam) meta.weighting = to_string(cam.weighting);

  const auto dir = ws.out / "saliency";
  std::filesystem::create_directories(dir);
  const auto stem = dir / saliency_stem(req.case_id, req.slice_index, req.modality, req.method);
  save_saliency(stem, map, meta);
  write_pgm(stem.string() + ".pgm", map.grid());
  write_overlay_ppm(stem.string() + ".ppm", image, map);
  log << "wrote " << stem.string() << ".{bin,json,pgm,ppm}\n";
  return stem;
}

// ---------------------------------------------------------------------------
// benchmark / ablate

/// Evaluation slices for one modality: configured split, optionally only
/// tumor-bearing slices, optionally truncated.
inline std::vector<EvalRecord> evaluation_set(const RunConfig& cfg, const DatasetManifest& m, Modality mod) {
  auto records = load_eval_records(m, mod, cfg.eval.split);
  if (cfg.eval.positive_only)
    std::erase_if(records, [](const EvalRecord& r) { return r.slice.label != 1; });
  if (cfg.eval.max_slices > 0 && records.size() > static_cast<std::size_t>(cfg.eval.max_slices))
    records.resize(static_cast<std::size_t>(cfg.eval.max_slices));
  if (records.empty()) throw ValidationError("no evaluation slices for " + to_string(mod));
  return records;
}

struct SliceScore {
  std::string case_id;
  int slice_index = 0;
  std::string modality;
  std::string method;
  MetricTriple metrics;
};

inline ReportRow summarize_scores(const std::string& dataset, const std::string& modality, const std::string& method,
                                  const std::vector<MetricTriple>& scores) {
  std::vector<double> d, i, h;
  for (const auto& s : scores) {
    d.push_back(s.dice);
    i.push_back(s.iou);
    h.push_back(s.hd95);
  }
  return {dataset, modality, method, summarize(d), summarize(i), summarize(h), false, {}};
}

inline ReportRow failed_row(const std::string& dataset, const std::string& modality, const std::string& method,
                            const std::string& error) {
  ReportRow r{dataset, modality, method, {}, {}, {}, true, error};
  return r;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline void write_report_pair(const std::filesystem::path& dir, const std::string& stem, const BenchmarkReport& r) {
  write_text(dir / (stem + ".csv"), render_report(r, ReportFormat::csv));
  write_text(dir / (stem + ".md"), render_report(r, ReportFormat::markdown));
}

inline void write_per_slice(const std::filesystem::path& path, const std::vector<SliceScore>& scores) {
  std::ostringstream out;
  out << "case_id,slice_index,modality,method,dice,iou,hd95\n";
  for (const auto& s : scores)
    out << detail::csv_field(s.case_id) << "," << s.slice_index << "," << detail::csv_field(s.modality) << ","
        << detail::csv_field(s.method)
        << "," << detail::full_precision(s.metrics.dice) << "," << detail::full_precision(s.metrics.iou) << ","
        << detail::full_precision(s.metrics.hd95) << "\n";
  write_text(path, out.str());
}

struct BenchmarkResult {
  BenchmarkReport report;
  std::vector<SliceScore> per_slice;
};

/// Every configured method on every modality with the configured scales.
inline BenchmarkResult benchmark(const RunConfig& cfg, const DatasetManifest& m,
                                 const std::map<Modality, Classifier>& models) {
  BenchmarkResult result;
  result.report.title = "CAM comparison";
  for (Modality mod : cfg.modalities) {
    const Classifier& model = models.at(mod);
    const auto records = evaluation_set(cfg, m, mod);
    for (CamMethod method : cfg.methods) {
      const std::string name = display_name(method);
      try {
        const CamRequest req = cfg.cam_request(method);
        std::vector<MetricTriple> scores(records.size());
        parallel_for(records.size(), [&](std::size_t i) {
          const SaliencyMap map = multiscale_cam(req, model, records[i].slice.image, cfg.scales);
          scores[i] = evaluate_masks(binarize(map, cfg.threshold), records[i].mask);
        });
        result.report.add(summarize_scores(cfg.dataset.name, to_string(mod), name, scores));
        for (std::size_t i = 0; i < records.size(); ++i)
          result.per_slice.push_back({records[i].slice.case_id, records[i].slice.slice_index, to_string(mod), name,
                                      scores[i]});
      } catch (const Error& e) {
        result.report.add(failed_row(cfg.dataset.name, to_string(mod), name, e.what()));
      }
    }
  }
  return result;
}

inline std::map<Modality, Classifier> load_models(const RunConfig& cfg, const Workspace& ws) {
  std::map<Modality, Classifier> models;
  for (Modality mod : cfg.modalities) models.emplace(mod, require_checkpoint(ws, mod));
  return models;
}

inline int run_benchmark(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  const DatasetManifest m = require_manifest(ws);
  const auto models = load_models(cfg, ws);
  const BenchmarkResult r = benchmark(cfg, m, models);
  write_report_pair(ws.out, "report", r.report);
  write_per_slice(ws.out / "per_slice.csv", r.per_slice);
  log << render_report(r.report, ReportFormat::markdown);
  for (const auto& row : r.report.rows)
    if (row.failed) log << "failed: " << row.modality << " " << row.method << ": " << row.error << "\n";
  return r.report.any_failed() ? kExitPartial : kExitOk;
}

inline std::string scale_label(double f) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "Single-scale %g×", f);
  return buf;
}

struct AblationResult {
  BenchmarkReport weighting;  // Cfd-CAM logits vs. confidence
  BenchmarkReport scale;      // each single scale, then the fused multi-scale map
};

/// Cfd-CAM ablations. The confidence-weighted per-scale maps are computed
/// once and shared by the multi-scale row of both tables.
inline AblationResult ablate(const RunConfig& cfg, const DatasetManifest& m,
                             const std::map<Modality, Classifier>& models) {
  AblationResult result;
  result.weighting.title = "Cfd-CAM feature-map weighting";
  result.scale.title = "Cfd-CAM input scales";
  const std::size_t nf = cfg.scales.factors.size();
  for (Modality mod : cfg.modalities) {
    const Classifier& model = models.at(mod);
    const std::string ds = cfg.dataset.name, mn = to_string(mod);
    const auto records = evaluation_set(cfg, m, mod);
    CamRequest conf = cfg.cam_request(CamMethod::cfdcam);
    conf.weighting = Weighting::confidence;
    CamRequest logit = conf;
    logit.weighting = Weighting::logits;

    std::vector<std::vector<MetricTriple>> single(nf, std::vector<MetricTriple>(records.size()));
    std::vector<MetricTriple> multi(records.size()), logits(records.size());
    std::string conf_error, logit_error;
    std::vector<std::string> errors(records.size()), logit_errors(records.size());
    parallel_for(records.size(), [&](std::size_t i) {
      const auto& rec = records[i];
      try {
        const auto maps = per_scale_maps(conf, model, rec.slice.image, cfg.scales);
        for (std::size_t f = 0; f < nf; ++f)
          single[f][i] = evaluate_masks(binarize(fuse_maps({maps[f]}, cfg.scales.fusion), cfg.threshold), rec.mask);
        multi[i] = evaluate_masks(binarize(fuse_maps(maps, cfg.scales.fusion), cfg.threshold), rec.mask);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
      try {
        logits[i] = evaluate_masks(binarize(multiscale_cam(logit, model, rec.slice.image, cfg.scales), cfg.threshold),
                                   rec.mask);
      } catch (const Error& e) {
        logit_errors[i] = e.what();
      }
    });
    for (const auto& e : errors)
      if (!e.empty() && conf_error.empty()) conf_error = e;
    for (const auto& e : logit_errors)
      if (!e.empty() && logit_error.empty()) logit_error = e;

    result.weighting.add(logit_error.empty() ? summarize_scores(ds, mn, "Logits", logits)
                                             : failed_row(ds, mn, "Logits", logit_error));
    result.weighting.add(conf_error.empty() ? summarize_scores(ds, mn, "Confidence", multi)
                                            : failed_row(ds, mn, "Confidence", conf_error));
    for (std::size_t f = 0; f < nf; ++f) {
      const std::string label = scale_label(cfg.scales.factors[f]);
      result.scale.add(conf_error.empty() ? summarize_scores(ds, mn, label, single[f]) : failed_row(ds, mn, label, conf_error));
    }
    result.scale.add(conf_error.empty() ? summarize_scores(ds, mn, "Multi-scale", multi)
                                        : failed_row(ds, mn, "Multi-scale", conf_error));
  }
  return result;
}

inline int run_ablate(const RunConfig& cfg, const Workspace& ws, std::ostream& log) {
  const DatasetManifest m = require_manifest(ws);
  const auto models = load_models(cfg, ws);
  const AblationResult r = ablate(cfg, m, models);
  write_report_pair(ws.out, "ablation_weighting", r.weighting);
  write_report_pair(ws.out, "ablation_scale", r.scale);
  const std::string md =
      render_report(r.weighting, ReportFormat::markdown) + "\n" + render_report(r.scale, ReportFormat::markdown);
  write_text(ws.out / "ablation.md", md);
  log << md;
  return r.weighting.any_failed() || r.scale.any_failed() ? kExitPartial : kExitOk;
}

}  // namespace cfdcam
