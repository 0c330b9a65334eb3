#include <gtest/gtest.h>

#include "pairforge/annotate.h"
#include "pairforge/errors.h"
#include "pairforge/io.h"
#include "test_support.h"

namespace pairforge {
namespace {

Reconstruction Triangle() {
  // Images 1, 2, 3 in scene 0 and 4 in scene 1.
  return ParseReconstruction(
      "SCENE 0 a\nSCENE 1 b\n"
      "IMAGE 1 0 i1 10 10\nIMAGE 2 0 i2 10 10\nIMAGE 3 0 i3 10 10\nIMAGE 4 1 i4 10 10\n"
      "POINT3D 0 0 0 0 TRACK 1:0 2:0 3:0\n"
      "POINT3D 1 0 0 0 TRACK 1:1 2:1\n"
      "POINT3D 2 0 0 0 TRACK 2:2 3:2\n"
      "POINT3D 3 0 0 0 TRACK 2:3 1:3\n");
}

TEST(CovisibilityTest, CountsCommonPoints) {
  const auto table = BuildCovisibility(Triangle());
  EXPECT_EQ(table.Get(ImageId(1), ImageId(2)), 3u);
  EXPECT_EQ(table.Get(ImageId(2), ImageId(1)), 3u);
  EXPECT_EQ(table.Get(ImageId(2), ImageId(3)), 2u);
  EXPECT_EQ(table.Get(ImageId(1), ImageId(3)), 1u);
  EXPECT_EQ(table.Get(ImageId(1), ImageId(4)), 0u);
  EXPECT_EQ(table.Get(ImageId(2), ImageId(2)), 4u);
  EXPECT_EQ(table.size(), 3u);
}

TEST(CovisibilityTest, EmptyReconstruction) {
  EXPECT_EQ(BuildCovisibility(Reconstruction()).size(), 0u);
}

TEST(CovisibilityTest, MatchesBruteForceAndIsThreadInvariant) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    Philox rng(40 + s);
    const auto recon = testing::RandomReconstruction(rng, 60, 3000);
    const auto oracle = testing::BruteForceCovisibility(recon);
    const auto serial = BuildCovisibility(recon, 1);
    ASSERT_EQ(serial.size(), oracle.size());
    for (const auto& [pair, count] : oracle) {
      ASSERT_EQ(serial.Get(pair.first, pair.second), count);
    }
    for (unsigned t : {2u, 3u, 8u}) {
      EXPECT_EQ(BuildCovisibility(recon, t).SortedEntries(), serial.SortedEntries());
    }
  }
}

TEST(PositiveListTest, ThresholdOrderAndTies) {
  const auto recon = Triangle();
  const auto table = BuildCovisibility(recon);
  const auto lists = BuildPositiveLists(table, recon, 0);
  ASSERT_EQ(lists.lists.size(), 4u);
  const auto& l2 = lists.lists.at(ImageId(2));
  ASSERT_EQ(l2.size(), 2u);
  EXPECT_EQ(l2[0], (PositiveEntry{ImageId(1), 3}));
  EXPECT_EQ(l2[1], (PositiveEntry{ImageId(3), 2}));
  EXPECT_TRUE(lists.lists.at(ImageId(4)).empty());
  EXPECT_EQ(lists.scene_of.at(ImageId(4)), SceneId(1));

  // GS must exceed epsilon strictly.
  const auto strict = BuildPositiveLists(table, recon, 2);
  EXPECT_EQ(strict.lists.at(ImageId(2)).size(), 1u);
  EXPECT_TRUE(strict.lists.at(ImageId(3)).empty());
}

TEST(PositiveListTest, EqualGsBreaksTiesById) {
  const auto recon = ParseReconstruction(
      "SCENE 0 a\nIMAGE 9 0 x 1 1\nIMAGE 3 0 y 1 1\nIMAGE 5 0 z 1 1\n"
      "POINT3D 0 0 0 0 TRACK 5:0 9:0 3:0\n");
  const auto lists = BuildPositiveLists(BuildCovisibility(recon), recon, 0);
  const auto& l = lists.lists.at(ImageId(5));
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0].image, ImageId(3));
  EXPECT_EQ(l[1].image, ImageId(9));
}

TEST(PositiveListTest, RoundTripsThroughText) {
  Philox rng(8);
  const auto recon = testing::RandomReconstruction(rng, 30, 500);
  const auto lists = BuildPositiveLists(BuildCovisibility(recon), recon, 1);
  EXPECT_EQ(ParsePositiveLists(WritePositiveLists(lists)), lists);
}

TEST(PositiveListTest, SceneFieldIsOptional) {
  const auto lists = ParsePositiveLists("POSLIST 1\n2 40\n3 35\nPOSLIST 2 7\n1 40\n");
  EXPECT_EQ(lists.lists.at(ImageId(1)).size(), 2u);
  EXPECT_EQ(lists.scene_of.count(ImageId(1)), 0u);
  EXPECT_EQ(lists.scene_of.at(ImageId(2)), SceneId(7));
  EXPECT_THROW(ParsePositiveLists("2 40\n"), ParseError);
}

TEST(SummaryTest, CountsImagesAndPoints) {
  EXPECT_EQ(Summarize(Triangle()), (ReconstructionSummary{4, 4}));
}

}  // namespace
}  // namespace pairforge
