#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "cdpm/series.hpp"
#include "support/helpers.hpp"

namespace {

using cdpm::series::Series;
using cdpm::series::WindowPair;
namespace ser = cdpm::series;
using cdpm::testing::max_abs_diff;
using cdpm::testing::random_series;

Series column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Series(n, 1, std::move(v));
}

TEST(InstanceNormalizeTest, PopulationStd) {
  WindowPair p{column({1, 2, 3}), column({4, 5}), {}, {}};
  auto n = ser::instance_normalize(p);
  const double sd = std::sqrt(2.0 / 3.0);
  EXPECT_NEAR(n.hist(0, 0), -1.0 / sd, 1e-12);
  EXPECT_NEAR(n.hist(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(n.hist(2, 0), 1.0 / sd, 1e-12);
  EXPECT_NEAR(n.hist(2, 0), 1.2247, 1e-4);
  EXPECT_NEAR(n.target(0, 0), 2.0 / sd, 1e-12);  // same statistics transferred
  EXPECT_TRUE(n.normalized);
}

TEST(InstanceNormalizeTest, ConstantChannelUsesFloor) {
  WindowPair p{column({5, 5, 5, 5}), column({5, 6}), {}, {}};
  auto n = ser::instance_normalize(p);
  for (double v : n.hist.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(n.std[0], ser::kDefaultStdFloor);
  EXPECT_NEAR(n.target(1, 0), 1.0 / ser::kDefaultStdFloor, 1e-6);
}

TEST(InstanceNormalizeTest, NeedsTwoRows) {
  WindowPair p{column({1}), column({2}), {}, {}};
  EXPECT_THROW(ser::instance_normalize(p), std::invalid_argument);
}

TEST(InstanceNormalizeTest, RoundTripOnRandomWindows) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    WindowPair p{random_series(24, 3, seed, 5.0), random_series(12, 3, seed + 1000, 5.0), {}, {}};
    auto back = ser::denormalize(ser::instance_normalize(p));
    EXPECT_LE(max_abs_diff(back.hist.values(), p.hist.values()), 1e-9);
    EXPECT_LE(max_abs_diff(back.target.values(), p.target.values()), 1e-9);
  }
}

TEST(InstanceNormalizeTest, StatisticsIgnoreTarget) {
  WindowPair p{random_series(16, 2, 1), random_series(8, 2, 2), {}, {}};
  auto a = ser::instance_normalize(p);
  p.target = random_series(8, 2, 3, 100.0);
  auto b = ser::instance_normalize(p);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
  EXPECT_EQ(a.hist, b.hist);
}

TEST(DenormalizeTest, Examples) {
  auto z = ser::denormalize(Series(3, 2, 0.0), {1.5, -2.0}, {3.0, 4.0});
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(z(t, 0), 1.5);
    EXPECT_EQ(z(t, 1), -2.0);
  }
  EXPECT_EQ(ser::denormalize(column({1}), {3}, {2})(0, 0), 5.0);
  EXPECT_THROW(ser::denormalize(Series(2, 2), {1.0}, {1.0}), std::invalid_argument);
}

TEST(MovingAverageTest, ConstantInvariant) {
  auto t = ser::moving_average_trend(column({5, 5, 5, 5, 5}), 3);
  for (double v : t.values()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(MovingAverageTest, RampWithReplicatedEdges) {
  auto t = ser::moving_average_trend(column({0, 1, 2, 3, 4}), 3);
  const std::vector<double> expected{1.0 / 3.0, 1, 2, 3, 11.0 / 3.0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(t(i, 0), expected[i], 1e-15);
}

TEST(MovingAverageTest, KernelOneIsIdentity) {
  auto s = random_series(9, 2, 4);
  EXPECT_EQ(ser::moving_average_trend(s, 1), s);
}

TEST(MovingAverageTest, RejectsBadKernels) {
  EXPECT_THROW(ser::moving_average_trend(column({1, 2, 3}), 4), std::invalid_argument);
  EXPECT_THROW(ser::moving_average_trend(column({1, 2, 3}), 0), std::invalid_argument);
  EXPECT_THROW(ser::moving_average_trend(column({1, 2, 3}), 7), std::invalid_argument);
  EXPECT_NO_THROW(ser::moving_average_trend(column({1, 2, 3}), 5));
}

TEST(MovingAverageTest, TranslationEquivariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = random_series(40, 2, seed);
    Series shifted = s;
    for (auto& v : shifted.values()) v += 3.25;
    auto a = ser::moving_average_trend(s, 25);
    auto b = ser::moving_average_trend(shifted, 25);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b.values()[i], a.values()[i] + 3.25, 1e-12);
  }
}

TEST(DecomposeTest, ReconstructsExactlyOnRandomSeries) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    auto s = random_series(30 + seed % 40, 1 + seed % 3, seed, 10.0);
    auto d = ser::decompose(s, 25);
    EXPECT_LE(max_abs_diff((d.trend + d.seasonal).values(), s.values()), 1e-9);
  }
}

TEST(DecomposeTest, FastSinusoidGoesToSeasonal) {
  // Period 5 divides the kernel width 25, so interior trend averages whole periods.
  Series s(100, 1);
  for (std::size_t t = 0; t < 100; ++t) s(t, 0) = std::sin(2.0 * std::numbers::pi * t / 5.0);
  auto d = ser::decompose(s, 25);
  for (std::size_t t = 12; t < 88; ++t) {
    EXPECT_NEAR(d.trend(t, 0), 0.0, 1e-12);
    EXPECT_NEAR(d.seasonal(t, 0), s(t, 0), 1e-12);
  }
}

TEST(DecomposeTest, RampHasNoInteriorSeasonal) {
  Series s(60, 1);
  for (std::size_t t = 0; t < 60; ++t) s(t, 0) = 0.3 * t - 2.0;
  auto d = ser::decompose(s, 25);
  for (std::size_t t = 12; t < 48; ++t) EXPECT_NEAR(d.seasonal(t, 0), 0.0, 1e-12);
  EXPECT_GT(std::abs(d.seasonal(0, 0)), 0.1);  // edge effect from replication
}

TEST(PatchStatisticsTest, SinglePatch) {
  auto ps = ser::patch_statistics(column({1, 2, 3, 4}), 4);
  ASSERT_EQ(ps.num_patches, 1u);
  EXPECT_DOUBLE_EQ(ps.means(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(ps.variances(0, 0), 1.25);
}

TEST(PatchStatisticsTest, ConstantPatchHasZeroVariance) {
  auto ps = ser::patch_statistics(column({7, 7, 7}), 3);
  EXPECT_DOUBLE_EQ(ps.means(0, 0), 7.0);
  EXPECT_EQ(ps.variances(0, 0), 0.0);
}

TEST(PatchStatisticsTest, PartialFinalPatchReplicatesLastRow) {
  Series s = column({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto ps = ser::patch_statistics(s, 8);
  ASSERT_EQ(ps.num_patches, 2u);
  EXPECT_GE(ps.num_patches * 8, s.rows());
  // Second patch: rows 8 and 9, then row 9 six more times.
  const std::vector<double> patch{8, 9, 9, 9, 9, 9, 9, 9};
  double m = 0.0;
  for (double v : patch) m += v;
  m /= 8.0;
  double v2 = 0.0;
  for (double v : patch) v2 += (v - m) * (v - m);
  EXPECT_DOUBLE_EQ(ps.means(1, 0), m);
  EXPECT_DOUBLE_EQ(ps.variances(1, 0), v2 / 8.0);
}

TEST(PatchStatisticsTest, OversizedPatchGivesOnePaddedPatch) {
  auto ps = ser::patch_statistics(column({1, 3}), 4);
  ASSERT_EQ(ps.num_patches, 1u);
  EXPECT_DOUBLE_EQ(ps.means(0, 0), 2.5);  // 1, 3, 3, 3
}

TEST(PatchStatisticsTest, VarianceNonNegativeAndZeroOnlyForConstant) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto s = random_series(20, 2, seed);
    if (seed % 4 == 0) {
      for (std::size_t t = 8; t < 16; ++t) s(t, 1) = 1.5;  // patch 1 of channel 1 constant
    }
    auto ps = ser::patch_statistics(s, 8);
    for (std::size_t p = 0; p < ps.num_patches; ++p) {
      for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_GE(ps.variances(p, c), 0.0);
        const bool constant = seed % 4 == 0 && p == 1 && c == 1;
        if (constant) {
          EXPECT_EQ(ps.variances(p, c), 0.0);
        } else {
          EXPECT_GT(ps.variances(p, c), 0.0);
        }
      }
    }
  }
}

}  // namespace
