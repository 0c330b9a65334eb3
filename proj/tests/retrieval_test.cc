#include <gtest/gtest.h>

#include <fstream>

#include "pairforge/errors.h"
#include "pairforge/retrieval.h"
#include "test_support.h"

namespace pairforge {
namespace {

DescriptorSet GaussianCorpus(std::uint64_t seed, std::size_t n, std::size_t dim) {
  Philox rng(seed);
  DescriptorSet set(dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.Normal();
    set.Add("d" + std::to_string(i), std::move(v));
  }
  return set;
}

TEST(BruteForceTest, SkipsSelfAndBreaksTiesByName) {
  DescriptorSet set(1);
  set.Add("c", {1.0});
  set.Add("a", {-1.0});
  set.Add("q", {0.0});
  set.Add("b", {3.0});
  const auto r = BruteForceKnn(set, set, 2);
  ASSERT_EQ(r.queries.size(), 4u);
  const auto& q = r.queries[2];
  EXPECT_EQ(q.query, "q");
  EXPECT_EQ(q.neighbors, (std::vector<Neighbor>{{"a", 1.0}, {"c", 1.0}}));
  EXPECT_THROW(BruteForceKnn(set, set, 4), ValidationError);
  DescriptorSet wide(2);
  wide.Add("w", {1.0, 2.0});
  EXPECT_THROW(BruteForceKnn(wide, set, 1), DimensionError);
}

TEST(BruteForceTest, AgreesWithSortedDistances) {
  const auto corpus = GaussianCorpus(3, 60, 5);
  const auto r = BruteForceKnn(corpus, corpus, 7);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::vector<double> d;
    const Eigen::Map<const Eigen::VectorXd> qi(corpus[i].vector.data(), 5);
    for (std::size_t j = 0; j < corpus.size(); ++j) {
      if (j == i) continue;
      d.push_back((qi - Eigen::Map<const Eigen::VectorXd>(corpus[j].vector.data(), 5)).norm());
    }
    std::sort(d.begin(), d.end());
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(r.queries[i].neighbors[j].distance, d[j], 1e-12);
  }
}

TEST(HnswTest, HighRecallAndSelfExclusion) {
  const auto corpus = GaussianCorpus(1, 500, 16);
  const auto index = HnswIndex::Build(corpus);
  const auto approx = index.Query(corpus, 10);
  for (const auto& q : approx.queries) {
    ASSERT_EQ(q.neighbors.size(), 10u);
    for (std::size_t j = 0; j < q.neighbors.size(); ++j) {
      EXPECT_NE(q.neighbors[j].name, q.query);
      if (j > 0) {
        EXPECT_LE(q.neighbors[j - 1].distance, q.neighbors[j].distance);
      }
    }
  }
  EXPECT_GT(RecallAtK(approx, BruteForceKnn(corpus, corpus, 10)), 0.95);
}

TEST(HnswTest, DegreeBoundsHold) {
  const auto corpus = GaussianCorpus(2, 300, 8);
  HnswConfig cfg;
  cfg.max_degree = 6;
  const auto index = HnswIndex::Build(corpus, cfg);
  for (std::size_t i = 0; i < index.size(); ++i) {
    EXPECT_LE(index.Links(i, 0).size(), 12u);
  }
  cfg.max_degree = 1;
  EXPECT_THROW(cfg.Validate(), ValidationError);
  EXPECT_THROW(HnswIndex::Build(DescriptorSet(3)), ValidationError);
}

TEST(HnswTest, SerializeRoundTripAnswersIdentically) {
  const auto corpus = GaussianCorpus(4, 200, 6);
  const auto index = HnswIndex::Build(corpus);
  const auto back = HnswIndex::Parse(index.Serialize());
  EXPECT_EQ(back.Query(corpus, 5), index.Query(corpus, 5));
  EXPECT_EQ(back.Serialize(), index.Serialize());

  testing::TempDir dir("hnsw");
  WriteIndexFile(dir / "idx.bin", index);
  EXPECT_EQ(ReadIndexFile(dir / "idx.bin").Serialize(), index.Serialize());
}

TEST(HnswTest, CorruptIndexIsRejected) {
  const std::string bytes = HnswIndex::Build(GaussianCorpus(5, 50, 4)).Serialize();
  auto expect_kind = [](const std::string& b, FormatError::Kind kind) {
    try {
      HnswIndex::Parse(b);
      ADD_FAILURE() << "expected FormatError";
    } catch (const FormatError& e) {
      EXPECT_EQ(e.kind(), kind);
    }
  };
  std::string bad = bytes;
  bad[0] = 'X';
  expect_kind(bad, FormatError::Kind::kMagic);
  expect_kind(bytes.substr(0, bytes.size() / 2), FormatError::Kind::kTruncated);
  expect_kind(bytes + "x", FormatError::Kind::kDimension);
}

TEST(PairsTest, RoundTripAndErrors) {
  const auto corpus = GaussianCorpus(6, 20, 3);
  const auto r = BruteForceKnn(corpus, corpus, 4);
  EXPECT_EQ(ParsePairs(WritePairs(r)), r);
  EXPECT_THROW(ParsePairs("a b 0 1.0\n"), ParseError);
  EXPECT_THROW(ParsePairs("a b 1 -1.0\n"), ParseError);
  EXPECT_THROW(ParsePairs("a b 1\n"), ParseError);
}

TEST(AccuracyTest, CountsDistinctUnorderedPairs) {
  GroundTruth truth;
  truth.Add("b", "a");
  truth.Add("c", "d");
  EXPECT_TRUE(truth.Contains("a", "b"));
  RetrievalResult r;
  r.queries.push_back({"a", {{"b", 0.1}, {"c", 0.2}}});
  r.queries.push_back({"b", {{"a", 0.1}, {"b", 0.0}}});
  const auto report = RetrievalAccuracy(r, truth);
  EXPECT_EQ(report.pairs, 2u);
  EXPECT_EQ(report.correct, 1u);
  EXPECT_DOUBLE_EQ(report.accuracy, 0.5);
  EXPECT_EQ(RetrievalAccuracy(RetrievalResult{}, truth).Format(), "accuracy=0.0 pairs=0 correct=0");
}

TEST(AccuracyTest, GroundTruthUsesStrictInlierThreshold) {
  MatchSet matches;
  matches.pairs.push_back({ImagePair(ImageId(1), ImageId(2)), std::vector<Correspondence>(15)});
  matches.pairs.push_back({ImagePair(ImageId(1), ImageId(3)), std::vector<Correspondence>(16)});
  const auto truth = GroundTruth::FromMatches(matches, ImageNames());
  EXPECT_EQ(truth.size(), 1u);
  EXPECT_TRUE(truth.Contains("3", "1"));
}

TEST(PipelineTest, TimesBothStagesAndTruncatesK) {
  const auto corpus = GaussianCorpus(7, 12, 4);
  const auto out = TimedPipeline(corpus, HnswConfig{}, 30);
  EXPECT_EQ(out.timing.t_feature_extraction, 0.0);
  EXPECT_GE(out.timing.t_nn_search, 0.0);
  ASSERT_EQ(out.result.queries.size(), 12u);
  EXPECT_EQ(out.result.queries[0].neighbors.size(), 11u);
  EXPECT_NE(out.timing.Format().find("t_nns="), std::string::npos);
}

}  // namespace
}  // namespace pairforge
