#include <gtest/gtest.h>

#include "pairforge/errors.h"
#include "pairforge/head.h"
#include "test_support.h"

namespace pairforge {
namespace {

using Eigen::VectorXd;

HeadSpec Spec(AggregationKind kind, std::size_t dim) {
  HeadSpec s;
  s.kind = kind;
  s.input_dim = dim;
  if (kind == AggregationKind::kNetVlad) s.clusters = 3;
  return s;
}

TEST(HeadSpecTest, FormatParseRoundTrip) {
  for (auto kind : {AggregationKind::kLinear, AggregationKind::kNetVlad, AggregationKind::kGem,
                    AggregationKind::kMax}) {
    auto s = Spec(kind, 7);
    if (kind == AggregationKind::kLinear) s.output_dim = 5;
    if (kind == AggregationKind::kNetVlad) s.sharpness = 12.5;
    if (kind == AggregationKind::kGem) {
      s.shared_p = false;
      s.gem_p = 2.25;
    }
    EXPECT_EQ(HeadSpec::Parse(s.Format()), s) << s.Format();
  }
}

TEST(HeadSpecTest, ParseErrorsCarryColumns) {
  EXPECT_THROW(HeadSpec::Parse("HEAD gem"), ParseError);
  EXPECT_THROW(HeadSpec::Parse("HEAD gem p=3"), ParseError);
  try {
    HeadSpec::Parse("HEAD gem input_dim=4 q=1");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
    EXPECT_EQ(e.column(), 22u);
  }
  EXPECT_THROW(HeadSpec::Parse("HEAD mean input_dim=4"), ParseError);
}

TEST(HeadTest, LinearIdentityInitNormalizesInput) {
  const auto head = InitializeHead(Spec(AggregationKind::kLinear, 3), {}, 0);
  FeatureMap x(3, 1, 1, {3.0, 0.0, 4.0});
  const VectorXd y = head->Forward(x);
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[2], 0.8, 1e-15);
  EXPECT_THROW(head->Forward(FeatureMap(4, 1, 1)), DimensionError);
}

TEST(HeadTest, ParameterGradientsMatchFiniteDifferences) {
  Philox rng(13);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 4; ++i) maps.push_back(testing::RandomMap(rng, 4, 3, 3, 0.1, 1));
  auto linear = Spec(AggregationKind::kLinear, 36);
  linear.output_dim = 6;
  auto netvlad = Spec(AggregationKind::kNetVlad, 4);
  netvlad.sharpness = 2.0;
  auto gem = Spec(AggregationKind::kGem, 4);
  gem.shared_p = false;
  for (const auto& spec : {linear, netvlad, gem}) {
    auto head = InitializeHead(spec, maps, 5);
    head->params() += 0.05 * testing::RandomVector(rng, head->num_params());
    const FeatureMap& in = spec.kind == AggregationKind::kLinear
                               ? FeatureMap(36, 1, 1, maps[0].values())
                               : maps[0];
    const VectorXd w = testing::RandomVector(rng, head->output_dim());
    std::unique_ptr<Head::Cache> cache;
    head->Forward(in, &cache);
    VectorXd grad = VectorXd::Zero(static_cast<Eigen::Index>(head->num_params()));
    head->Backward(in, *cache, w, &grad);
    const auto f = [&](const VectorXd& p) { return w.dot(MakeHead(spec, p)->Forward(in)); };
    EXPECT_LT(testing::RelativeError(grad, testing::NumericGradient(f, head->params())), 1e-6)
        << spec.Format();
  }
}

TEST(HeadTest, MakeHeadChecksParameterCount) {
  EXPECT_THROW(MakeHead(Spec(AggregationKind::kNetVlad, 4), VectorXd::Zero(5)), DimensionError);
  EXPECT_EQ(MakeHead(Spec(AggregationKind::kNetVlad, 4), VectorXd::Zero(27))->num_params(), 27u);
  EXPECT_EQ(MakeHead(Spec(AggregationKind::kMax, 4), VectorXd())->num_params(), 0u);
  EXPECT_THROW(MakeHead(Spec(AggregationKind::kMax, 0), VectorXd()), ValidationError);
}

TEST(HeadTest, NetVladPackUnpack) {
  Philox rng(1);
  const auto spec = Spec(AggregationKind::kNetVlad, 4);
  const VectorXd flat = testing::RandomVector(rng, 27);
  const auto p = UnpackNetVlad(spec, flat);
  EXPECT_EQ(p.centers(1, 2), flat[6]);
  EXPECT_EQ(p.assign_weights(0, 1), flat[13]);
  EXPECT_EQ(p.assign_bias[2], flat[26]);
  EXPECT_EQ(PackNetVlad(p), flat);
}

TEST(HeadFileTest, RoundTripThroughFile) {
  Philox rng(4);
  testing::TempDir dir("head");
  auto spec = Spec(AggregationKind::kGem, 5);
  spec.shared_p = false;
  for (const auto& s : {spec, Spec(AggregationKind::kMax, 5)}) {
    auto head = InitializeHead(s, {}, 0);
    head->params() += 0.25 * testing::RandomVector(rng, head->num_params());
    const auto path = dir / "head.bin";
    WriteHeadFile(path, *head);
    const auto back = ReadHeadFile(path);
    EXPECT_EQ(back->spec(), head->spec());
    ASSERT_EQ(back->num_params(), head->num_params());
    if (head->num_params()) {
      EXPECT_LT((back->params() - head->params()).norm() / head->params().norm(), 1e-6);
    }
  }
  EXPECT_THROW(ParseHeadParams("HEAD gem input_dim=5"), FormatError);
}

}  // namespace
}  // namespace pairforge
