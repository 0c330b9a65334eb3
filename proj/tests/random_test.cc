#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "pairforge/random.h"

namespace pairforge {
namespace {

TEST(PhiloxTest, SameSeedSameStream) {
  Philox a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.NextU32(), b.NextU32());
}

TEST(PhiloxTest, DifferentSeedsDiverge) {
  Philox a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += a.NextU32() == b.NextU32();
  EXPECT_LT(equal, 3);
}

// Known-answer vector of Philox4x32-10 from the Random123 distribution.
TEST(PhiloxTest, BlockMatchesReferenceVector) {
  const auto zero = Philox::Block(0, 0);
  EXPECT_EQ(zero[0], 0x6627e8d5u);
  EXPECT_EQ(zero[1], 0xe169c58du);
  EXPECT_EQ(zero[2], 0xbc57ac4cu);
  EXPECT_EQ(zero[3], 0x9b00dbd8u);
}

TEST(PhiloxTest, StateResumesMidBlock) {
  Philox a(7);
  for (int i = 0; i < 5; ++i) a.NextU32();
  Philox b(a.state());
  for (int i = 0; i < 50; ++i) ASSERT_EQ(a.NextU32(), b.NextU32());
}

TEST(PhiloxTest, UniformInRange) {
  Philox rng(3);
  double sum = 0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.Uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 10000, 0.5, 0.02);
}

TEST(PhiloxTest, NormalMoments) {
  Philox rng(5);
  double sum = 0, sq = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.Normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.03);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(PhiloxTest, UniformIntCoversRange) {
  Philox rng(9);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.UniformInt(7);
    ASSERT_LT(v, 7u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(PhiloxTest, SampleWithoutReplacementIsDistinct) {
  Philox rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = rng.SampleWithoutReplacement(20, 8);
    ASSERT_EQ(s.size(), 8u);
    std::sort(s.begin(), s.end());
    EXPECT_EQ(std::adjacent_find(s.begin(), s.end()), s.end());
    EXPECT_LT(s.back(), 20u);
  }
  EXPECT_EQ(rng.SampleWithoutReplacement(5, 5).size(), 5u);
}

}  // namespace
}  // namespace pairforge
