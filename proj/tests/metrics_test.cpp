#include <gtest/gtest.h>

#include <regex>

#include "support.hpp"

using namespace cfdcam;

namespace {

BinaryMask mask_from(int h, int w, std::initializer_list<std::pair<int, int>> on) {
  BinaryMask m(h, w);
  for (auto [y, x] : on) m.set(y, x);
  return m;
}

struct Counts {
  double a = 0, b = 0, both = 0;
};

Counts count(const BinaryMask& a, const BinaryMask& b) {
  Counts c;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      c.a += a(y, x);
      c.b += b(y, x);
      c.both += a(y, x) && b(y, x);
    }
  return c;
}

BinaryMask shifted(const BinaryMask& m, int dy, int dx, int h, int w) {
  BinaryMask out(h, w);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(y, x)) out.set(y + dy, x + dx);
  return out;
}

}  // namespace

TEST(Binarize, StrictThreshold) {
  const auto zero = SaliencyMap::from_unit_grid(Grid(4, 4, 0.0));
  EXPECT_EQ(binarize(zero, 0.5).count(), 0u);
  const auto half = SaliencyMap::from_unit_grid(Grid(1, 3, {0.5, 0.5000001, 0.49}));
  const auto m = binarize(half, 0.5);
  EXPECT_FALSE(m(0, 0));
  EXPECT_TRUE(m(0, 1));
  EXPECT_FALSE(m(0, 2));
  EXPECT_THROW(binarize(zero, 0.0), ValidationError);
  EXPECT_THROW(binarize(zero, 1.0), ValidationError);
}

TEST(Binarize, MatchesLoopOracle) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto map = SaliencyMap::from_unit_grid(test::random_grid(rng, 16, 16, 0.0, 1.0));
    const double th = rng.uniform(0.05, 0.95);
    const auto m = binarize(map, th);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) EXPECT_EQ(m(y, x), map(y, x) > th);
  }
}

TEST(DiceIou, Examples) {
  const auto a = mask_from(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  const auto disjoint = mask_from(4, 4, {{3, 3}, {2, 3}});
  const auto half = mask_from(4, 4, {{0, 0}, {0, 1}, {3, 2}, {3, 3}});
  EXPECT_EQ(dice(a, a), 1.0);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(dice(a, disjoint), 0.0);
  EXPECT_EQ(iou(a, disjoint), 0.0);
  EXPECT_DOUBLE_EQ(dice(a, half), 0.5);
  EXPECT_DOUBLE_EQ(iou(a, half), 2.0 / 6.0);
  const BinaryMask empty(4, 4);
  EXPECT_EQ(dice(empty, empty), 1.0);
  EXPECT_EQ(iou(empty, empty), 1.0);
  EXPECT_EQ(dice(a, empty), 0.0);
  EXPECT_EQ(iou(empty, a), 0.0);
  EXPECT_THROW(dice(a, BinaryMask(4, 5)), ValidationError);
  EXPECT_THROW(iou(a, BinaryMask(5, 4)), ValidationError);
}

TEST(Hd95, Examples) {
  const auto a = mask_from(8, 8, {{2, 1}});
  const auto b = mask_from(8, 8, {{2, 6}});
  EXPECT_EQ(hd95(a, b), 5.0);
  EXPECT_EQ(hd95_bruteforce(a, b), 5.0);
  EXPECT_EQ(hd95(a, a), 0.0);
  EXPECT_EQ(hd95_bruteforce(a, a), 0.0);
  const BinaryMask empty(8, 8);
  EXPECT_EQ(hd95(empty, empty), 0.0);
  EXPECT_DOUBLE_EQ(hd95(a, empty), std::sqrt(128.0));
  EXPECT_DOUBLE_EQ(hd95(empty, b), std::sqrt(128.0));
  EXPECT_THROW(hd95(a, BinaryMask(8, 9)), ValidationError);
}

TEST(Hd95, HonorsSpacing) {
  BinaryMask a(6, 6, 2.0, 0.5), b(6, 6, 2.0, 0.5);
  a.set(0, 0);
  b.set(3, 4);
  EXPECT_DOUBLE_EQ(hd95(a, b), std::sqrt(36.0 + 4.0));
  EXPECT_DOUBLE_EQ(hd95_bruteforce(a, b), std::sqrt(40.0));
}

TEST(Percentile, LinearBetweenOrderStatistics) {
  EXPECT_DOUBLE_EQ(percentile_linear({4, 1, 3, 2}, 0.95), 3.85);
  EXPECT_DOUBLE_EQ(percentile_linear({0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 0.95), 9.5);
  EXPECT_DOUBLE_EQ(percentile_linear({7}, 0.95), 7.0);
  EXPECT_THROW(percentile_linear({}, 0.5), ValidationError);
}

TEST(Metrics, RandomPairsMatchOracles) {
  Rng rng(2);
  for (int t = 0; t < 250; ++t) {
    const int h = 1 + static_cast<int>(rng.below(32)), w = 1 + static_cast<int>(rng.below(32));
    const double pa = rng.uniform(0.0, 0.4), pb = rng.uniform(0.0, 0.4);
    const auto a = test::random_mask(rng, h, w, pa), b = test::random_mask(rng, h, w, pb);
    const auto c = count(a, b);
    const double d = c.a + c.b == 0 ? 1.0 : 2 * c.both / (c.a + c.b);
    const double j = c.a + c.b - c.both == 0 ? 1.0 : c.both / (c.a + c.b - c.both);
    EXPECT_EQ(dice(a, b), d);
    EXPECT_EQ(iou(a, b), j);
    EXPECT_NEAR(dice(a, b), 2 * iou(a, b) / (1 + iou(a, b)), 1e-12);
    EXPECT_LE(iou(a, b), dice(a, b));
    EXPECT_NEAR(hd95(a, b), hd95_bruteforce(a, b), 1e-9);
  }
}

TEST(Metrics, SymmetryAndIdentity) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto a = test::random_mask(rng, 20, 20, 0.2), b = test::random_mask(rng, 20, 20, 0.1);
    EXPECT_EQ(dice(a, b), dice(b, a));
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_EQ(hd95(a, b), hd95(b, a));
    if (a.count() > 0) {
      EXPECT_EQ(dice(a, a), 1.0);
      EXPECT_EQ(iou(a, a), 1.0);
      EXPECT_EQ(hd95(a, a), 0.0);
    }
  }
}

TEST(Metrics, TranslationInvariance) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto a = test::random_mask(rng, 12, 12, 0.25), b = test::random_mask(rng, 12, 12, 0.25);
    const int dy = static_cast<int>(rng.below(8)), dx = static_cast<int>(rng.below(8));
    const auto sa = shifted(a, dy, dx, 20, 20), sb = shifted(b, dy, dx, 20, 20);
    const auto pa = shifted(a, 0, 0, 20, 20), pb = shifted(b, 0, 0, 20, 20);
    EXPECT_EQ(dice(sa, sb), dice(pa, pb));
    EXPECT_EQ(iou(sa, sb), iou(pa, pb));
    EXPECT_NEAR(hd95(sa, sb), hd95(pa, pb), 1e-12);
  }
}

TEST(Summarize, Examples) {
  EXPECT_EQ(format_mean_std(summarize(std::vector<double>{0.5, 0.5})), "0.500±0.000");
  const auto s = summarize(std::vector<double>{0.0, 1.0});
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_DOUBLE_EQ(s.std, 0.5);
  EXPECT_EQ(s.count, 2u);
  EXPECT_EQ(format_mean_std(s), "0.500±0.500");
  EXPECT_EQ(format_mean_std({0.4786, 0.17349, 3}), "0.479±0.173");
  EXPECT_THROW(summarize(std::vector<double>{}), ValidationError);
  EXPECT_THROW(summarize(std::vector<double>{1.0, NAN}), ValidationError);
}

TEST(Summarize, MatchesTwoPassLoopAndIsOrderIndependent) {
  Rng rng(5);
  std::vector<double> v(100);
  for (double& x : v) x = rng.uniform();
  double mean = 0;
  for (double x : v) mean += x;
  mean /= 100;
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  const auto s = summarize(v);
  EXPECT_NEAR(s.mean, mean, 1e-12);
  EXPECT_NEAR(s.std, std::sqrt(var / 100), 1e-12);
  rng.shuffle(v);
  const auto r = summarize(v);
  EXPECT_NEAR(r.mean, s.mean, 1e-12);
  EXPECT_NEAR(r.std, s.std, 1e-12);
}

TEST(Summarize, CellFormat) {
  const std::regex cell(R"(^\d\.\d{3}±\d\.\d{3}$)");
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(1 + rng.below(30));
    for (double& x : v) x = rng.uniform();
    EXPECT_TRUE(std::regex_match(format_mean_std(summarize(v)), cell));
  }
}

TEST(EvaluateMasks, Triple) {
  const auto a = mask_from(8, 8, {{1, 1}, {1, 2}});
  const auto b = mask_from(8, 8, {{1, 2}, {1, 3}});
  const auto t = evaluate_masks(a, b);
  EXPECT_DOUBLE_EQ(t.dice, 0.5);
  EXPECT_DOUBLE_EQ(t.iou, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.hd95, 0.95);  // directed distances {0, 1}
}
