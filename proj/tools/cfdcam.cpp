// cfdcam: ingest, train, explain, benchmark and ablate from a JSON run config.
//
// Exit codes: 0 success, 1 partial failure, 2 I/O error, 3 configuration error.

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cfdcam/config.hpp"
#include "cfdcam/pipeline.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "run configuration (JSON)")->required();
  cmd->add_option("--seed", o.seed, "override the configured seed");
  cmd->add_option("--out", o.out, "output directory (overrides output_dir)");
}

cfdcam::RunConfig load(const CommonOptions& o, cfdcam::Workspace& ws) {
  cfdcam::RunConfig cfg = cfdcam::load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  ws = cfdcam::Workspace::resolve(cfg.output_dir);
  std::filesystem::create_directories(ws.out);
  return cfg;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const cfdcam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cfdcam::kExitConfig;
  } catch (const cfdcam::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return cfdcam::kExitIo;
  } catch (const cfdcam::FormatError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return cfdcam::kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return cfdcam::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cfdcam::kExitPartial;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class activation maps for weakly supervised tumor segmentation"};
  app.require_subcommand(1);

  CommonOptions ingest_opts, train_opts, explain_opts, bench_opts, ablate_opts;
  auto* ingest = app.add_subcommand("ingest", "slice volumes, derive labels, write the dataset manifest");
  add_common(ingest, ingest_opts);
  auto* train = app.add_subcommand("train", "contrastive pretraining then classifier fine-tuning per modality");
  add_common(train, train_opts);
  auto* explain = app.add_subcommand("explain", "saliency map for one slice");
  add_common(explain, explain_opts);
  std::string case_id, method_name, modality_name;
  int slice_index = 0;
  explain->add_option("--case", case_id, "case id")->required();
  explain->add_option("--slice", slice_index, "slice index along z")->required();
  explain->add_option("--method", method_name, "gradcam | scorecam | layercam | cfdcam")->required();
  explain->add_option("--modality", modality_name, "modality (default: first configured)");
  auto* bench = app.add_subcommand("benchmark", "every method on every modality; report.csv and report.md");
  add_common(bench, bench_opts);
  auto* ablate = app.add_subcommand("ablate", "Cfd-CAM weighting and scale ablations");
  add_common(ablate, ablate_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cfdcam::kExitConfig;
  }

  using namespace cfdcam;
  Workspace ws;
  if (*ingest)
    return guarded([&] {
      const RunConfig cfg = load(ingest_opts, ws);
      run_ingest(cfg, ws, std::cout);
      return int{kExitOk};
    });
  if (*train)
    return guarded([&] {
      const RunConfig cfg = load(train_opts, ws);
      return run_train(cfg, ws, std::cout);
    });
  if (*explain)
    return guarded([&] {
      const RunConfig cfg = load(explain_opts, ws);
      ExplainRequest req;
      req.case_id = case_id;
      req.slice_index = slice_index;
      try {
        req.method = parse_method(method_name);
        req.modality = modality_name.empty() ? cfg.modalities.front() : parse_modality(modality_name);
      } catch (const ValidationError& e) {
        throw ConfigError(e.what());
      }
      run_explain(cfg, ws, req, std::cout);
      return int{kExitOk};
    });
  if (*bench)
    return guarded([&] {
      const RunConfig cfg = load(bench_opts, ws);
      return run_benchmark(cfg, ws, std::cout);
    });
  return guarded([&] {
    const RunConfig cfg = load(ablate_opts, ws);
    return run_ablate(cfg, ws, std::cout);
  });
}
