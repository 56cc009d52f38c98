#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "../support/oracles.hpp"
#include "clickseg/geometry.hpp"

namespace clickseg {
namespace {

TEST(DistanceMapTest, SingleCornerClick) {
  const std::vector<Point> clicks{{0, 0}};
  const auto dm = euclidean_distance_map(clicks, 3, 3, 255.0f);
  EXPECT_FLOAT_EQ(dm.values(0, 0), 0.0f);
  EXPECT_NEAR(dm.values(2, 2), 2.0 * std::sqrt(2.0), 1e-6);
  EXPECT_FLOAT_EQ(dm.values(0, 2), 2.0f);
}

TEST(DistanceMapTest, NoClicksGivesCap) {
  const auto dm = euclidean_distance_map({}, 4, 4, 255.0f);
  for (auto v : dm.values) EXPECT_EQ(v, 255.0f);
}

TEST(DistanceMapTest, TruncatesAtCap) {
  const std::vector<Point> clicks{{0, 0}};
  const auto dm = euclidean_distance_map(clicks, 1, 40, 10.0f);
  EXPECT_EQ(dm.values(0, 39), 10.0f);
  EXPECT_EQ(dm.values(0, 5), 5.0f);
}

TEST(DistanceMapTest, RejectsOutOfBoundsClick) {
  const std::vector<Point> clicks{{1, 1}, {4, 0}};
  try {
    euclidean_distance_map(clicks, 4, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::out_of_range);
    EXPECT_NE(std::string(e.what()).find("click 1"), std::string::npos);
  }
  EXPECT_THROW(euclidean_distance_map({}, 0, 4), Error);
  EXPECT_THROW(euclidean_distance_map({}, 4, 4, 0.0f), Error);
}

TEST(DistanceMapTest, MatchesBruteForceOnRandomClicks) {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> coord(0, 31);
  std::vector<Point> clicks;
  for (int i = 0; i < 5; ++i) clicks.push_back({coord(gen), coord(gen)});
  const auto dm = euclidean_distance_map(clicks, 32, 32, 255.0f);
  const auto expected = oracle::edt(clicks, 32, 32, 255.0f);
  for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(dm.values[i], expected[i], 1e-6);
}

TEST(DistanceMapTest, OracleEquivalenceAcrossShapes) {
  std::mt19937_64 gen(12);
  std::uniform_int_distribution<int> dim(1, 64), count(0, 8);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = dim(gen), w = dim(gen);
    std::vector<Point> clicks;
    const int n = count(gen);
    for (int i = 0; i < n; ++i) clicks.push_back({int(gen() % w), int(gen() % h)});
    const auto dm = euclidean_distance_map(clicks, h, w, 20.0f);
    const auto expected = oracle::edt(clicks, h, w, 20.0f);
    for (std::size_t i = 0; i < expected.size(); ++i) ASSERT_NEAR(dm.values[i], expected[i], 1e-6);
  }
}

TEST(MergeTest, PositiveOnlyPeaksAtClick) {
  const std::vector<Point> pos{{5, 5}};
  const auto merged = merge_polarity_maps(euclidean_distance_map(pos, 11, 11), std::nullopt);
  EXPECT_FLOAT_EQ(merged(5, 5), 255.0f);
  EXPECT_GT(merged(5, 6), merged(5, 8));
  EXPECT_GT(merged(5, 5), merged(5, 6));
}

TEST(MergeTest, IdenticalSetsCancel) {
  const std::vector<Point> clicks{{1, 2}, {7, 3}};
  const auto a = euclidean_distance_map(clicks, 9, 9);
  const auto merged = merge_polarity_maps(a, a);
  for (auto v : merged) EXPECT_EQ(v, 0.0f);
}

TEST(MergeTest, OneByThirtyTwoStrip) {
  const std::vector<Point> pos{{0, 0}}, neg{{31, 0}};
  const auto p = euclidean_distance_map(pos, 1, 32);
  const auto n = euclidean_distance_map(neg, 1, 32);
  const auto merged = merge_polarity_maps(p, n);
  // Hand evaluation: (255 - 0) - (255 - 31) = 31, and the mirror at x = 31.
  EXPECT_FLOAT_EQ(merged(0, 0), 31.0f);
  EXPECT_FLOAT_EQ(merged(0, 31), -31.0f);
  // Same value via the brute-force distances.
  const auto bp = oracle::edt(pos, 1, 32, 255.0f), bn = oracle::edt(neg, 1, 32, 255.0f);
  for (int x = 0; x < 32; ++x) EXPECT_NEAR(merged(0, x), (255.0f - bp(0, x)) - (255.0f - bn(0, x)), 1e-6);
}

TEST(MergeTest, ShapeMismatch) {
  EXPECT_THROW(merge_polarity_maps(euclidean_distance_map({}, 3, 3), euclidean_distance_map({}, 3, 4)), Error);
}

TEST(NormalizeTest, AffineEndpoints) {
  const FloatGrid g(1, 3, std::vector<float>{0, 5, 10});
  const auto n = normalize_channel(g);
  EXPECT_FLOAT_EQ(n(0, 0), -1.0f);
  EXPECT_FLOAT_EQ(n(0, 1), 0.0f);
  EXPECT_FLOAT_EQ(n(0, 2), 1.0f);
  const auto z = normalize_channel(g, NormalizeRange::zero_one);
  EXPECT_FLOAT_EQ(z(0, 1), 0.5f);
}

TEST(NormalizeTest, ConstantMapsToZero) {
  for (auto v : normalize_channel(FloatGrid(4, 4, 7.0f))) EXPECT_EQ(v, 0.0f);
}

TEST(NormalizeTest, RejectsNonFinite) {
  FloatGrid g(2, 2, 1.0f);
  g(1, 1) = std::nanf("");
  EXPECT_THROW(normalize_channel(g), Error);
  g(1, 1) = INFINITY;
  EXPECT_THROW(normalize_channel(g), Error);
}

TEST(NormalizeTest, RandomGridProperties) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<float> val(-300.0f, 900.0f);
  for (int trial = 0; trial < 50; ++trial) {
    FloatGrid g(9, 13);
    for (auto& v : g) v = val(gen);
    const auto n = normalize_channel(g);
    const auto [lo, hi] = std::minmax_element(g.begin(), g.end());
    EXPECT_FLOAT_EQ(*std::min_element(n.begin(), n.end()), -1.0f);
    EXPECT_FLOAT_EQ(*std::max_element(n.begin(), n.end()), 1.0f);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double expected = 2.0 * (double(g[i]) - *lo) / (double(*hi) - *lo) - 1.0;
      ASSERT_NEAR(n[i], expected, 1e-6);
      for (std::size_t j = 0; j < g.size(); j += 7)
        if (g[i] < g[j]) ASSERT_LE(n[i], n[j]);
    }
    const auto again = normalize_channel(n);
    for (std::size_t i = 0; i < n.size(); ++i) ASSERT_NEAR(again[i], n[i], 1e-6);
  }
}

TEST(NormalizeTest, RegionRestricted) {
  FloatGrid g(1, 4, std::vector<float>{100, 0, 10, -50});
  Mask region(1, 4, std::vector<std::uint8_t>{0, 1, 1, 0});
  const auto n = normalize_channel(g, region, -1.0f);
  EXPECT_EQ(n(0, 0), -1.0f);
  EXPECT_EQ(n(0, 1), -1.0f);
  EXPECT_EQ(n(0, 2), 1.0f);
  EXPECT_EQ(n(0, 3), -1.0f);
}

Mask from_points(int h, int w, std::initializer_list<Point> pts) {
  Mask m(h, w, 0);
  for (const auto& p : pts) m(p.y, p.x) = 1;
  return m;
}

TEST(IouTest, Basics) {
  const auto a = from_points(4, 4, {{0, 0}, {1, 0}});
  const auto b = from_points(4, 4, {{1, 0}, {2, 0}});
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, from_points(4, 4, {{3, 3}})), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(iou(Mask(4, 4, 0), Mask(4, 4, 0)), 1.0);
  EXPECT_DOUBLE_EQ(iou(Mask(4, 4, 0), a), 0.0);
  EXPECT_THROW(iou(Mask(4, 4), Mask(4, 5)), Error);
}

TEST(IouTest, SymmetricOnRandomMasks) {
  std::mt19937_64 gen(9);
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_blob_mask(gen, 20, 17), b = oracle::random_blob_mask(gen, 20, 17);
    ASSERT_DOUBLE_EQ(iou(a, b), iou(b, a));
    ASSERT_DOUBLE_EQ(iou(a, b), oracle::iou(a, b));
  }
}

TEST(BoundaryIouTest, IdenticalAndDisjoint) {
  std::mt19937_64 gen(1);
  const auto a = oracle::random_blob_mask(gen, 30, 30);
  for (double d : {1.0, 2.0, 5.5}) EXPECT_DOUBLE_EQ(boundary_iou(a, a, d), 1.0);
  const auto left = from_points(6, 6, {{0, 0}, {0, 1}, {1, 0}});
  const auto right = from_points(6, 6, {{5, 5}, {4, 5}});
  EXPECT_DOUBLE_EQ(boundary_iou(left, right, 2.0), 0.0);
  EXPECT_THROW(boundary_iou(left, right, 0.5), Error);
}

TEST(BoundaryIouTest, MatchesBruteForceBand) {
  std::mt19937_64 gen(21);
  for (int t = 0; t < 80; ++t) {
    const auto a = oracle::random_blob_mask(gen, 16, 16), b = oracle::random_blob_mask(gen, 16, 16);
    ASSERT_DOUBLE_EQ(boundary_iou(a, b, 2.0), oracle::boundary_iou(a, b, 2.0));
  }
}

TEST(BoundaryIouTest, EqualsIouWhenBandCoversMasks) {
  std::mt19937_64 gen(4);
  for (int t = 0; t < 40; ++t) {
    const auto a = oracle::random_blob_mask(gen, 12, 12), b = oracle::random_blob_mask(gen, 12, 12);
    ASSERT_DOUBLE_EQ(boundary_iou(a, b, 20.0), iou(a, b));
    ASSERT_LE(boundary_iou(a, b, 3.0), 1.0);
  }
}

TEST(BoundaryIouTest, DefaultWidthIsTwoPercentOfDiagonal) {
  EXPECT_DOUBLE_EQ(default_boundary_width(640, 480), 16.0);
  EXPECT_DOUBLE_EQ(default_boundary_width(10, 10), 1.0);
}

TEST(MaskBoundaryTest, FullFrameIsPerimeter) {
  const auto b = mask_boundary(Mask(5, 4, 1));
  EXPECT_EQ(b.size(), 2u * 5 + 2u * 4 - 4);
  for (const auto& p : b) EXPECT_TRUE(p.x == 0 || p.y == 0 || p.x == 3 || p.y == 4);
}

TEST(MaskBoundaryTest, SinglePixel) {
  const auto b = mask_boundary(from_points(5, 5, {{2, 3}}));
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0], (Point{2, 3}));
}

TEST(MaskBoundaryTest, EmptyMaskFails) { EXPECT_THROW(mask_boundary(Mask(3, 3, 0)), Error); }

TEST(MaskBoundaryTest, MatchesBruteForceScan) {
  std::mt19937_64 gen(31);
  for (int t = 0; t < 80; ++t) {
    auto m = oracle::random_blob_mask(gen, 25, 19);
    if (count_foreground(m) == 0) continue;
    ASSERT_EQ(mask_boundary(m), oracle::boundary(m));
  }
}

TEST(InteriorDistanceTest, MatchesBruteForce) {
  std::mt19937_64 gen(41);
  for (int t = 0; t < 30; ++t) {
    auto m = oracle::random_blob_mask(gen, 24, 24);
    if (count_foreground(m) == 0) continue;
    const auto got = interior_distance(m);
    const auto expected = oracle::interior_distance(m);
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], expected[i], 1e-5);
  }
}

}  // namespace
}  // namespace clickseg
