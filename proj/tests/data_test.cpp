#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>

#include "support.hpp"

using namespace cfdcam;

namespace {

Volume ramp_volume(int d, int h, int w) {
  Volume v(d, h, w);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i % 17) * 0.5f;
  return v;
}

// Four slices, tumor pixels in slices 1 and 2 only.
VolumeRecord four_slice_case() {
  VolumeRecord r{"case_a", {}, Volume(4, 6, 6)};
  r.volumes.emplace(Modality::FLAIR, ramp_volume(4, 6, 6));
  r.mask->at(1, 2, 2) = 1.0f;
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 4; ++x) r.mask->at(2, y, x) = 1.0f;
  return r;
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

template <class T>
void put(std::vector<unsigned char>& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof v);
}

}  // namespace

TEST(SliceVolume, SingleSliceVolumeGivesOneSlice) {
  VolumeRecord r{"one", {}, Volume(1, 5, 7)};
  r.volumes.emplace(Modality::T2, ramp_volume(1, 5, 7));
  const auto s = slice_volume(r, Modality::T2);
  ASSERT_EQ(s.slices.size(), 1u);
  EXPECT_EQ(s.slices[0].image.height(), 5);
  EXPECT_EQ(s.slices[0].image.width(), 7);
  EXPECT_EQ(s.slices[0].label, 0);
}

TEST(SliceVolume, LabelsFollowMaskPerSlice) {
  const auto s = slice_volume(four_slice_case(), Modality::FLAIR);
  std::vector<int> labels;
  for (const auto& r : s.slices) labels.push_back(r.label);
  EXPECT_EQ(labels, (std::vector<int>{0, 1, 1, 0}));
  ASSERT_EQ(s.eval.size(), 4u);
  EXPECT_EQ(s.eval[1].mask.count(), 1u);
  EXPECT_EQ(s.eval[2].mask.count(), 9u);
}

TEST(SliceVolume, MinPositivePixels) {
  const auto s = slice_volume(four_slice_case(), Modality::FLAIR, nullptr, {Normalization::minmax, 5});
  EXPECT_EQ(s.slices[1].label, 0);
  EXPECT_EQ(s.slices[2].label, 1);
}

TEST(SliceVolume, MaskFreeNeedsLabelTable) {
  VolumeRecord r{"free", {}, std::nullopt};
  r.volumes.emplace(Modality::T1, ramp_volume(3, 4, 4));
  EXPECT_THROW(slice_volume(r, Modality::T1), ValidationError);
  const LabelTable t{{{"free", 0, Modality::T1}, 0}, {{"free", 1, Modality::T1}, 1}, {{"free", 2, Modality::T1}, 0}};
  const auto s = slice_volume(r, Modality::T1, &t);
  ASSERT_EQ(s.slices.size(), 3u);
  EXPECT_EQ(s.slices[1].label, 1);
  EXPECT_TRUE(s.eval.empty());
  const LabelTable partial{{{"free", 0, Modality::T1}, 0}};
  EXPECT_THROW(slice_volume(r, Modality::T1, &partial), ValidationError);
}

TEST(SliceVolume, MissingModalityAndShapeMismatch) {
  auto r = four_slice_case();
  EXPECT_THROW(slice_volume(r, Modality::T1), ValidationError);
  r.mask = Volume(4, 5, 6);
  EXPECT_THROW(slice_volume(r, Modality::FLAIR), ValidationError);
}

TEST(SliceVolume, SliceCountConserved) {
  SynthSpec spec;
  spec.n_cases = 12;
  spec.seed = 5;
  std::size_t total = 0;
  for (const auto& rec : synth_blob_dataset(spec)) total += slice_volume(rec, spec.modality).slices.size();
  EXPECT_EQ(total, static_cast<std::size_t>(spec.n_cases * spec.slices_per_case));
}

TEST(DeriveLabel, Examples) {
  BinaryMask m(64, 64);
  EXPECT_EQ(derive_label(m), 0);
  m.set(10, 10);
  EXPECT_EQ(derive_label(m), 1);
  BinaryMask blob(64, 64);
  for (int i = 0; i < 50; ++i) blob.set(20 + i / 10, 20 + i % 10);
  EXPECT_EQ(blob.count(), 50u);
  EXPECT_EQ(derive_label(blob), 1);
  EXPECT_EQ(derive_label(blob, 50), 1);
  EXPECT_EQ(derive_label(blob, 51), 0);
  EXPECT_EQ(derive_label(m, 0), 1);
}

TEST(NormalizeIntensity, ConstantBecomesZeros) {
  const ImageTensor c(1, 5, 5, 3.7);
  const auto n = normalize_intensity(c);
  for (double v : n.values()) EXPECT_EQ(v, 0.0);
}

TEST(NormalizeIntensity, UnitRangeUnchanged) {
  Rng rng(4);
  auto img = test::random_image(rng, 1, 9, 9, 0.0, 1.0);
  img.values()[0] = 0.0;
  img.values()[1] = 1.0;
  EXPECT_LE(test::max_abs_diff(normalize_intensity(img).values(), img.values()), 1e-15);
}

TEST(NormalizeIntensity, MatchesLoopOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto img = test::random_image(rng, 1, 7, 11, -50.0, 300.0);
    double lo = img.values()[0], hi = lo;
    for (double v : img.values()) lo = std::min(lo, v), hi = std::max(hi, v);
    const auto n = normalize_intensity(img);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(n.values()[i], (img.values()[i] - lo) / (hi - lo), 1e-14);
    EXPECT_DOUBLE_EQ(*std::min_element(n.values().begin(), n.values().end()), 0.0);
    EXPECT_DOUBLE_EQ(*std::max_element(n.values().begin(), n.values().end()), 1.0);
  }
}

TEST(NormalizeIntensity, NonFiniteThrows) {
  ImageTensor img(1, 3, 3, 1.0);
  img.values()[4] = std::nan("");
  EXPECT_THROW(normalize_intensity(img), ValidationError);
}

TEST(ZscoreIntensity, ZeroMeanUnitStd) {
  Rng rng(2);
  const auto z = zscore_intensity(test::random_image(rng, 1, 16, 16, 3.0, 9.0));
  double mean = 0.0, var = 0.0;
  for (double v : z.values()) mean += v;
  mean /= static_cast<double>(z.size());
  for (double v : z.values()) var += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var / static_cast<double>(z.size()), 1.0, 1e-9);
}

TEST(SplitCases, Sizes) {
  auto s = split_cases(ids(10), {});
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  s = split_cases(ids(2000), {});
  EXPECT_EQ(s.train.size(), 1600u);
  EXPECT_EQ(s.val.size(), 200u);
  EXPECT_EQ(s.test.size(), 200u);
  s = split_cases(ids(25), {});
  EXPECT_EQ(s.train.size(), 21u);
  EXPECT_EQ(s.val.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
}

TEST(SplitCases, DisjointCoveringDeterministic) {
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    auto input = ids(137);
    const auto a = split_cases(input, {{8, 1, 1}, seed});
    Rng rng(seed + 1000);
    rng.shuffle(input);
    const auto b = split_cases(input, {{8, 1, 1}, seed});
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.val, b.val);
    EXPECT_EQ(a.test, b.test);
    std::set<std::string> all;
    for (const auto* part : {&a.train, &a.val, &a.test}) all.insert(part->begin(), part->end());
    EXPECT_EQ(all.size(), 137u);
    EXPECT_EQ(a.train.size() + a.val.size() + a.test.size(), 137u);
  }
  EXPECT_NE(split_cases(ids(137), {{8, 1, 1}, 0}).test, split_cases(ids(137), {{8, 1, 1}, 1}).test);
}

TEST(SplitCases, Rejections) {
  EXPECT_THROW(split_cases(ids(5), {}), ValidationError);
  EXPECT_THROW(split_cases({"a", "a", "b", "c", "d", "e", "f", "g", "h", "i"}, {}), ValidationError);
  EXPECT_THROW(split_cases(ids(10), {{8, 0, 1}, 0}), ValidationError);
}

TEST(DrawDisc, AreaNearPiRSquared) {
  BinaryMask m(40, 40);
  draw_disc(m, 20.0, 20.0, 6.0);
  EXPECT_NEAR(static_cast<double>(m.count()), std::numbers::pi * 36.0, 2.0);
  BinaryMask c(40, 40);
  draw_disc(c, 20.0, 20.0, 1.0);
  EXPECT_EQ(c.count(), 5u);
}

TEST(SynthBlobs, SameSeedBitIdentical) {
  SynthSpec spec;
  spec.n_cases = 12;
  spec.seed = 21;
  const auto a = synth_blob_dataset(spec), b = synth_blob_dataset(spec);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].case_id, b[i].case_id);
    EXPECT_EQ(a[i].volumes, b[i].volumes);
    EXPECT_EQ(a[i].mask, b[i].mask);
  }
  spec.seed = 22;
  EXPECT_NE(synth_blob_dataset(spec)[0].volumes, a[0].volumes);
}

TEST(SynthBlobs, MasksAreTheDrawnDiscs) {
  SynthSpec spec;
  spec.n_cases = 30;
  spec.seed = 7;
  std::vector<SynthBlob> blobs;
  const auto data = synth_blob_dataset(spec, &blobs);
  ASSERT_FALSE(blobs.empty());
  std::map<std::pair<std::string, int>, const SynthBlob*> by_slice;
  for (const auto& b : blobs) by_slice[{b.case_id, b.slice_index}] = &b;
  for (const auto& rec : data) {
    const auto sliced = slice_volume(rec, spec.modality);
    for (const auto& e : sliced.eval) {
      BinaryMask expect(spec.image_size, spec.image_size);
      const auto it = by_slice.find({rec.case_id, e.slice.slice_index});
      if (it != by_slice.end()) {
        draw_disc(expect, it->second->cy, it->second->cx, it->second->radius);
        EXPECT_EQ(e.slice.label, 1);
        EXPECT_GE(it->second->radius, spec.min_slice_radius);
        EXPECT_LE(it->second->radius, spec.max_radius);
      } else {
        EXPECT_EQ(e.slice.label, 0);
      }
      EXPECT_EQ(e.mask, expect) << rec.case_id << " slice " << e.slice.slice_index;
    }
  }
}

TEST(SynthBlobs, TooFewCasesRejected) {
  SynthSpec spec;
  spec.n_cases = 9;
  EXPECT_THROW(synth_blob_dataset(spec), ValidationError);
}

TEST(VolumeIo, RawRoundTripBitIdentical) {
  const auto dir = test::scratch_dir("raw");
  Volume v = ramp_volume(3, 5, 4);
  v.data[7] = -1.25e-7f;
  v.spacing = {2.5, 0.9, 1.1};
  save_raw(dir / "v.raw", v);
  EXPECT_EQ(load_raw(dir / "v.raw"), v);
}

TEST(VolumeIo, TruncatedRawRejected) {
  const auto dir = test::scratch_dir("raw_trunc");
  save_raw(dir / "v.raw", ramp_volume(2, 4, 4));
  std::filesystem::resize_file(dir / "v.raw", std::filesystem::file_size(dir / "v.raw") - 3);
  EXPECT_THROW(load_raw(dir / "v.raw"), FormatError);
  std::ofstream(dir / "bad.raw") << "not json\n";
  EXPECT_THROW(load_raw(dir / "bad.raw"), FormatError);
  EXPECT_THROW(load_raw(dir / "missing.raw"), IoError);
}

TEST(VolumeIo, HandBuiltNiftiInt16Scaled) {
  // nx=3, ny=2, nz=2, int16 voxels v = 10*z + 3*y + x, slope 2, intercept 1.
  std::vector<unsigned char> b(352 + 12 * 2, 0);
  put(b, 0, std::int32_t{348});
  const std::int16_t dim[8] = {3, 3, 2, 2, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put(b, 40 + 2 * i, dim[i]);
  put(b, 70, std::int16_t{4});
  put(b, 72, std::int16_t{16});
  const float pixdim[8] = {1.0f, 0.5f, 0.75f, 3.0f, 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) put(b, 76 + 4 * i, pixdim[i]);
  put(b, 108, 352.0f);
  put(b, 112, 2.0f);
  put(b, 116, 1.0f);
  std::memcpy(b.data() + 344, "n+1", 4);
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) put(b, 352 + 2 * (x + 3 * (y + 2 * z)), static_cast<std::int16_t>(10 * z + 3 * y + x));
  const auto dir = test::scratch_dir("nifti");
  std::ofstream(dir / "v.nii", std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());

  const Volume v = load_volume(dir / "v.nii");
  EXPECT_EQ(v.depth, 2);
  EXPECT_EQ(v.height, 2);
  EXPECT_EQ(v.width, 3);
  EXPECT_EQ(v.spacing, (std::array<double, 3>{3.0, 0.75, 0.5}));
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 3; ++x) EXPECT_EQ(v.at(z, y, x), 2.0f * (10 * z + 3 * y + x) + 1.0f);

  b.resize(360);
  std::ofstream(dir / "short.nii", std::ios::binary).write(reinterpret_cast<const char*>(b.data()), b.size());
  EXPECT_THROW(load_volume(dir / "short.nii"), FormatError);
}

TEST(VolumeIo, NiftiWriteReadRoundTrip) {
  const auto dir = test::scratch_dir("nifti_rt");
  Volume v = ramp_volume(3, 4, 5);
  v.spacing = {2.0, 1.0, 0.5};
  save_nifti(dir / "v.nii.gz", v);
  save_nifti(dir / "v.nii", v);
  EXPECT_EQ(load_volume(dir / "v.nii.gz"), v);
  EXPECT_EQ(load_volume(dir / "v.nii"), v);
}

TEST(LeakAudit, TrainingRecordsCarryNoMask) {
  static_assert(!HasMaskMember<SliceRecord>);
  static_assert(HasMaskMember<EvalRecord>);
  const auto& [case_id, slice_index, modality, image, label] = SliceRecord{};
  static_assert(std::is_same_v<std::remove_cvref_t<decltype(image)>, ImageTensor>);
  static_assert(std::is_same_v<std::remove_cvref_t<decltype(label)>, int>);
  (void)case_id, (void)slice_index, (void)modality;
}

TEST(LeakAudit, TrainingLoaderNeverOpensMasks) {
  const auto dir = test::scratch_dir("leak");
  SynthSpec spec;
  spec.n_cases = 10;
  spec.seed = 2;
  const auto data = synth_blob_dataset(spec);
  const auto m = ingest_records(data, "leak", {spec.modality}, {}, Normalization::minmax, dir);
  const auto before = load_training_slices(m, spec.modality, "train");
  for (const auto& c : m.cases)
    if (c.mask) std::filesystem::remove(m.resolve(*c.mask));
  const auto after = load_training_slices(m, spec.modality, "train");
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before[i].label, after[i].label);
    EXPECT_EQ(before[i].image, after[i].image);
  }
  EXPECT_THROW(load_eval_records(m, spec.modality, "train"), IoError);
}

TEST(Dataset, IngestRoundTrip) {
  const auto dir = test::scratch_dir("ingest");
  SynthSpec spec;
  spec.n_cases = 10;
  spec.seed = 4;
  const auto data = synth_blob_dataset(spec);
  const auto m = ingest_records(data, "rt", {spec.modality}, {{8, 1, 1}, 3}, Normalization::minmax, dir);
  const auto back = read_manifest(dir);
  EXPECT_EQ(back.name, "rt");
  EXPECT_EQ(back.cases.size(), 10u);
  EXPECT_EQ(back.split.seed, 3u);
  for (std::size_t i = 0; i < m.cases.size(); ++i) {
    EXPECT_EQ(back.cases[i].case_id, m.cases[i].case_id);
    EXPECT_EQ(back.cases[i].split, m.cases[i].split);
  }
  const auto labels = read_labels_csv(dir / "labels.csv");
  EXPECT_EQ(labels.size(), 80u);
  write_labels_csv(dir / "copy.csv", labels);
  EXPECT_EQ(read_labels_csv(dir / "copy.csv"), labels);

  const auto train = load_training_slices(back, spec.modality, "train");
  const auto eval = load_eval_records(back, spec.modality, "train");
  ASSERT_EQ(train.size(), eval.size());
  EXPECT_EQ(train.size(), 64u);
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_EQ(train[i].label, eval[i].slice.label);
    EXPECT_EQ(train[i].label, derive_label(eval[i].mask));
    EXPECT_EQ(train[i].image, eval[i].slice.image);
  }
  EXPECT_EQ(load_training_slices(back, spec.modality, "all").size(), 80u);
}

TEST(Dataset, MissingManifest) {
  EXPECT_THROW(read_manifest(test::scratch_dir("nomanifest")), IoError);
}
