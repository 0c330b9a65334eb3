#include <gtest/gtest.h>

#include <cmath>

#include "pairforge/errors.h"
#include "pairforge/losses.h"
#include "test_support.h"

namespace pairforge {
namespace {

using Eigen::VectorXd;

VectorXd Vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Direct evaluation from distances with the 1/(|P|+|N|) denominator.
double PlainRankedList(const VectorXd& q, const std::vector<VectorXd>& p,
                       const std::vector<VectorXd>& n, double alpha, double m) {
  const auto d = [&](const VectorXd& x) { return (q.normalized() - x.normalized()).norm(); };
  double l1 = 0;
  for (const auto& x : n) l1 += std::max(0.0, alpha - d(x));
  for (const auto& x : p) l1 += std::max(0.0, d(x) - alpha + m);
  l1 /= static_cast<double>(p.size() + n.size());
  double l2 = 0;
  for (std::size_t j = 0; j + 1 < p.size(); ++j) l2 += std::max(0.0, d(p[j]) - d(p[j + 1]));
  return l1 + l2 / static_cast<double>(p.size());
}

TEST(DistanceTest, NormalizesInputs) {
  EXPECT_DOUBLE_EQ(Distance(Vec({3, 0}), Vec({0, 0.5})), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(Distance(Vec({2, 2}), Vec({5, 5})), 0.0);
  EXPECT_THROW(Distance(Vec({0, 0}), Vec({1, 0})), NormalizationError);
  EXPECT_THROW(Distance(Vec({1, 0}), Vec({1, 0, 0})), DimensionError);
}

TEST(TripletTest, ValueAndInactiveHinge) {
  LossConfig cfg;
  // D(A,P) = 0, D(A,N) = sqrt 2: inactive.
  const auto easy = TripletLoss(Vec({1, 0}), Vec({2, 0}), Vec({0, 1}), cfg);
  EXPECT_EQ(easy.value, 0.0);
  EXPECT_EQ(easy.active_terms, 0u);
  for (const auto& g : easy.grads) EXPECT_EQ(g.norm(), 0.0);
  // Swapped roles: sqrt 2 - 0 + m.
  const auto hard = TripletLoss(Vec({1, 0}), Vec({0, 1}), Vec({2, 0}), cfg);
  EXPECT_NEAR(hard.value, std::sqrt(2.0) + cfg.margin, 1e-15);
  EXPECT_EQ(hard.active_terms, 1u);
}

TEST(TripletTest, GradientMatchesFiniteDifferences) {
  LossConfig cfg;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Philox rng(s);
    const VectorXd a = testing::RandomVector(rng, 8), p = testing::RandomVector(rng, 8),
                   n = testing::RandomVector(rng, 8);
    const auto r = TripletLoss(a, p, n, cfg);
    const auto fa = [&](const VectorXd& x) { return TripletLoss(x, p, n, cfg).value; };
    const auto fn = [&](const VectorXd& x) { return TripletLoss(a, p, x, cfg).value; };
    EXPECT_LT(testing::RelativeError(r.grads[0], testing::NumericGradient(fa, a)), 1e-6);
    EXPECT_LT(testing::RelativeError(r.grads[2], testing::NumericGradient(fn, n)), 1e-6);
  }
}

TEST(RankedListTest, MatchesDirectEvaluationWithPlainAveraging) {
  LossConfig cfg;
  cfg.nontrivial_only = false;
  for (std::uint64_t s = 0; s < 20; ++s) {
    Philox rng(100 + s);
    cfg.alpha = s % 2 ? kNetVladAlpha : kDefaultAlpha;
    const VectorXd q = testing::RandomVector(rng, 6);
    std::vector<VectorXd> p, n;
    for (int i = 0; i < 3; ++i) p.push_back(testing::RandomVector(rng, 6));
    for (int i = 0; i < 12; ++i) n.push_back(testing::RandomVector(rng, 6));
    EXPECT_NEAR(RankedListLoss(q, p, n, cfg).value,
                PlainRankedList(q, p, n, cfg.alpha, cfg.margin), 1e-13);
  }
}

TEST(RankedListTest, NontrivialAveragingDividesByActiveTerms) {
  LossConfig cfg;  // alpha 0.9, m 0.1
  const VectorXd q = Vec({1, 0});
  // Positive at distance sqrt 2 (active: 1.414 - 0.8), negative at 0 (active: 0.9),
  // negative at distance 2 (inactive).
  const auto r = RankedListLoss(q, std::vector<VectorXd>{Vec({0, 1})},
                                std::vector<VectorXd>{Vec({1, 0}), Vec({-1, 0})}, cfg);
  EXPECT_EQ(r.active_terms, 2u);
  EXPECT_NEAR(r.value, ((std::sqrt(2.0) - 0.8) + 0.9) / 2.0, 1e-15);
}

TEST(RankedListTest, OrderingTermPenalizesInversions) {
  LossConfig cfg;
  cfg.alpha = 1.35;
  const VectorXd q = Vec({1, 0, 0});
  Philox rng(4);
  const VectorXd near = testing::AtDistance(rng, q, 0.2);
  const VectorXd far = testing::AtDistance(rng, q, 0.5);
  const std::vector<VectorXd> none;
  const auto ordered = RankedListLoss(q, std::vector<VectorXd>{near, far}, none, cfg);
  const auto inverted = RankedListLoss(q, std::vector<VectorXd>{far, near}, none, cfg);
  EXPECT_EQ(ordered.value, 0.0);
  EXPECT_NEAR(inverted.value, 0.3 / 2.0, 1e-12);
}

TEST(RankedListTest, ErrorsAndConfig) {
  LossConfig cfg;
  const std::vector<VectorXd> none;
  EXPECT_THROW(RankedListLoss(Vec({1, 0}), none, none, cfg), ValidationError);
  EXPECT_THROW(RankedListLoss(Vec({0, 0}), std::vector<VectorXd>{Vec({1, 0})}, none, cfg),
               NormalizationError);
  cfg.alpha = 0.05;
  EXPECT_THROW(cfg.Validate(), ValidationError);
  EXPECT_EQ(ParseLossKind("triplet"), LossKind::kTriplet);
  EXPECT_EQ(ParseLossKind(LossKindName(LossKind::kRankedList)), LossKind::kRankedList);
  EXPECT_THROW(ParseLossKind("contrastive"), ValidationError);
}

TrainingBatch TwoQueryBatch() {
  TrainingBatch batch;
  batch.queries.push_back({ImageId(0), {{ImageId(1), 50}, {ImageId(2), 40}}, {}});
  batch.queries.push_back({ImageId(3), {{ImageId(4), 50}, {ImageId(5), 40}}, {}});
  return batch;
}

TEST(BatchLossTest, RankedListIsMeanOfPerQueryLosses) {
  Philox rng(6);
  Embeddings emb;
  for (std::uint32_t i = 0; i < 6; ++i) emb[ImageId(i)] = testing::RandomVector(rng, 5);
  const auto batch = TwoQueryBatch();
  LossConfig cfg;
  const auto r = BatchRankedListLoss(batch, emb, cfg);
  const double q0 = RankedListLoss(emb[ImageId(0)], std::vector<VectorXd>{emb[ImageId(1)], emb[ImageId(2)]},
                                   std::vector<VectorXd>{emb[ImageId(4)], emb[ImageId(5)]}, cfg).value;
  const double q1 = RankedListLoss(emb[ImageId(3)], std::vector<VectorXd>{emb[ImageId(4)], emb[ImageId(5)]},
                                   std::vector<VectorXd>{emb[ImageId(1)], emb[ImageId(2)]}, cfg).value;
  EXPECT_NEAR(r.value, (q0 + q1) / 2, 1e-14);
  EXPECT_EQ(r.grads.size(), 6u);
}

TEST(BatchLossTest, TripletCountsEveryCombination) {
  Philox rng(7);
  Embeddings emb;
  for (std::uint32_t i = 0; i < 6; ++i) emb[ImageId(i)] = testing::RandomVector(rng, 5);
  LossConfig cfg;
  cfg.nontrivial_only = false;
  const auto r = BatchTripletLoss(TwoQueryBatch(), emb, cfg);
  EXPECT_EQ(r.total_terms, 8u);  // 2 queries x 2 positives x 2 negatives
  double sum = 0;
  for (std::uint32_t a : {0u, 3u}) {
    const std::uint32_t pbase = a + 1, nbase = a == 0 ? 4 : 1;
    for (std::uint32_t p = pbase; p < pbase + 2; ++p) {
      for (std::uint32_t n = nbase; n < nbase + 2; ++n) {
        sum += TripletLoss(emb[ImageId(a)], emb[ImageId(p)], emb[ImageId(n)], cfg).value;
      }
    }
  }
  EXPECT_NEAR(r.value, sum / 8, 1e-14);
}

TEST(BatchLossTest, HardNegativesReplaceStructuralOnes) {
  auto batch = TwoQueryBatch();
  batch.queries[0].hard_negatives = {ImageId(9)};
  EXPECT_EQ(NegativesFor(batch, 0), std::vector<ImageId>{ImageId(9)});
  EXPECT_EQ(NegativesFor(batch, 1).size(), 2u);
  Embeddings emb;
  Philox rng(8);
  for (std::uint32_t i = 0; i < 6; ++i) emb[ImageId(i)] = testing::RandomVector(rng, 3);
  EXPECT_THROW(BatchRankedListLoss(batch, emb, LossConfig{}), ValidationError);
  emb[ImageId(9)] = testing::RandomVector(rng, 3);
  EXPECT_EQ(BatchRankedListLoss(batch, emb, LossConfig{}).grads.count(ImageId(9)), 1u);
}

}  // namespace
}  // namespace pairforge
