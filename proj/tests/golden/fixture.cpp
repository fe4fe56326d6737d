// Writes the inputs for make_golden.py: reference network checkpoints, the
// probe image, one synthetic slice and a small labelled evaluation set.
//
// usage: golden_fixture OUT_DIR

#include <cstdio>
#include <fstream>
#include <iostream>

#include "../support.hpp"

using namespace cfdcam;

namespace {

void write_f64(const std::filesystem::path& p, const std::vector<double>& v) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: golden_fixture OUT_DIR\n";
    return 2;
  }
  const std::filesystem::path out = argv[1];
  std::filesystem::create_directories(out);

  save_checkpoint(out / "ref7", reference_network(7));
  write_f64(out / "probe.bin", test::probe_image().values());

  // Explain fixture: first tumor slice of the CLI test dataset.
  const auto cli_cases = synth_blob_dataset(test::cli_synth_spec());
  nlohmann::json meta;
  for (const auto& rec : cli_cases) {
    const auto sliced = slice_volume(rec, Modality::FLAIR);
    for (const auto& e : sliced.eval)
      if (e.slice.label == 1 && meta.empty()) {
        meta = {{"case_id", e.slice.case_id}, {"slice_index", e.slice.slice_index}};
        write_f64(out / "explain_slice.bin", e.slice.image.values());
      }
  }

  // Accuracy fixture: a short deterministic fine-tune, then every slice of the set.
  const auto acc = test::accuracy_fixture();
  save_checkpoint(out / "acc_model", acc.model);
  std::vector<double> images;
  nlohmann::json labels = nlohmann::json::array();
  for (const auto& r : acc.eval) {
    images.insert(images.end(), r.image.values().begin(), r.image.values().end());
    labels.push_back(r.label);
  }
  write_f64(out / "acc_images.bin", images);
  meta["acc_labels"] = labels;
  std::ofstream(out / "fixture.json") << meta.dump(2) << "\n";
  return 0;
}
