#include <gtest/gtest.h>

#include <cmath>

#include "pairforge/aggregate.h"
#include "pairforge/errors.h"
#include "test_support.h"

namespace pairforge {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

NetVladParams RandomNetVlad(Philox& rng, std::size_t k, std::size_t d) {
  NetVladParams p;
  p.centers.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  p.assign_weights.resize(p.centers.rows(), p.centers.cols());
  p.assign_bias.resize(p.centers.rows());
  for (Eigen::Index i = 0; i < p.centers.size(); ++i) {
    p.centers.data()[i] = rng.Normal() * 0.3;
    p.assign_weights.data()[i] = rng.Normal();
  }
  for (Eigen::Index i = 0; i < p.assign_bias.size(); ++i) p.assign_bias[i] = rng.Normal();
  p.sharpness = 1.0;
  return p;
}

// Loop-by-loop NetVLAD straight from the definition.
VectorXd NaiveNetVlad(const FeatureMap& map, const NetVladParams& p) {
  const std::size_t K = p.clusters(), D = map.channels(), N = map.pixels();
  std::vector<double> v(K * D, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<double> x(D);
    double norm = 0;
    for (std::size_t d = 0; d < D; ++d) {
      x[d] = map.values()[d * N + i];
      norm += x[d] * x[d];
    }
    for (auto& xd : x) xd /= std::sqrt(norm);
    std::vector<double> logits(K);
    double mx = -1e300;
    for (std::size_t k = 0; k < K; ++k) {
      logits[k] = p.assign_bias[static_cast<Eigen::Index>(k)];
      for (std::size_t d = 0; d < D; ++d) {
        logits[k] += p.assign_weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) * x[d];
      }
      mx = std::max(mx, logits[k]);
    }
    double z = 0;
    for (auto& l : logits) z += std::exp(l - mx);
    for (std::size_t k = 0; k < K; ++k) {
      const double a = std::exp(logits[k] - mx) / z;
      for (std::size_t d = 0; d < D; ++d) {
        v[k * D + d] += a * (x[d] - p.centers(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)));
      }
    }
  }
  if (p.intra_normalize) {
    for (std::size_t k = 0; k < K; ++k) {
      double n = 0;
      for (std::size_t d = 0; d < D; ++d) n += v[k * D + d] * v[k * D + d];
      n = std::sqrt(n);
      if (n > 0) {
        for (std::size_t d = 0; d < D; ++d) v[k * D + d] /= n;
      }
    }
  }
  VectorXd out = Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return out / out.norm();
}

TEST(L2NormalizedTest, ForwardAndBackward) {
  VectorXd v(2);
  v << 3, 4;
  const auto n = L2Normalized::Of(v);
  EXPECT_DOUBLE_EQ(n.norm, 5.0);
  EXPECT_NEAR(n.unit[0], 0.6, 1e-15);
  // Gradient along the vector itself vanishes.
  EXPECT_LT(n.Backward(n.unit).norm(), 1e-15);
  EXPECT_THROW(L2Normalized::Of(VectorXd::Zero(3)), NormalizationError);
  VectorXd bad(1);
  bad << std::nan("");
  EXPECT_THROW(L2Normalized::Of(bad), NormalizationError);
}

TEST(LocalFeaturesTest, ColumnPerPixel) {
  FeatureMap map(2, 2, 3);
  for (std::size_t i = 0; i < map.size(); ++i) map.values()[i] = static_cast<double>(i);
  const MatrixXd x = LocalFeatures(map);
  ASSERT_EQ(x.rows(), 2);
  ASSERT_EQ(x.cols(), 6);
  EXPECT_EQ(x(0, 4), map.at(0, 1, 1));
  EXPECT_EQ(x(1, 2), map.at(1, 0, 2));
}

TEST(NetVladTest, MatchesLoopImplementation) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Philox rng(s);
    auto params = RandomNetVlad(rng, 4, 5);
    params.intra_normalize = s % 2 == 0;
    const auto map = testing::RandomMap(rng, 5, 3, 4, -1, 1);
    const VectorXd out = NetVladForward(map, params);
    EXPECT_NEAR(out.norm(), 1.0, 1e-12);
    EXPECT_LT((out - NaiveNetVlad(map, params)).norm(), 1e-12);
  }
}

TEST(NetVladTest, InvariantToPerPixelScale) {
  Philox rng(3);
  const auto params = RandomNetVlad(rng, 3, 4);
  auto map = testing::RandomMap(rng, 4, 2, 2, 0.1, 1);
  const VectorXd before = NetVladForward(map, params);
  for (std::size_t d = 0; d < 4; ++d) map.at(d, 1, 0) *= 7.0;
  EXPECT_LT((NetVladForward(map, params) - before).norm(), 1e-12);
}

TEST(NetVladTest, GradientsMatchFiniteDifferences) {
  Philox rng(11);
  auto params = RandomNetVlad(rng, 3, 4);
  const auto map = testing::RandomMap(rng, 4, 3, 3, -1, 1);
  const VectorXd w = testing::RandomVector(rng, 12);
  NetVladCache cache;
  NetVladForward(map, params, &cache);
  const auto g = NetVladBackward(cache, params, w);

  Eigen::VectorXd bias = params.assign_bias;
  const auto f_bias = [&](const VectorXd& b) {
    auto p = params;
    p.assign_bias = b;
    return w.dot(NetVladForward(map, p));
  };
  EXPECT_LT(testing::RelativeError(g.assign_bias, testing::NumericGradient(f_bias, bias)), 1e-6);

  const VectorXd flat_in = Eigen::Map<const VectorXd>(map.values().data(), static_cast<Eigen::Index>(map.size()));
  const auto f_in = [&](const VectorXd& v) {
    FeatureMap m(4, 3, 3, std::vector<double>(v.data(), v.data() + v.size()));
    return w.dot(NetVladForward(m, params));
  };
  // g.input is D x N; its column-major storage is pixel-major, so compare via LocalFeatures layout.
  const VectorXd num = testing::NumericGradient(f_in, flat_in);
  MatrixXd num_dn(4, 9);
  for (Eigen::Index d = 0; d < 4; ++d) {
    for (Eigen::Index i = 0; i < 9; ++i) num_dn(d, i) = num[d * 9 + i];
  }
  EXPECT_LT((g.input - num_dn).norm() / num_dn.norm(), 1e-6);
}

TEST(NetVladTest, ShapeErrors) {
  Philox rng(5);
  const auto params = RandomNetVlad(rng, 3, 4);
  EXPECT_THROW(NetVladForward(testing::RandomMap(rng, 5, 2, 2, 0, 1), params), DimensionError);
  NetVladCache cache;
  NetVladForward(testing::RandomMap(rng, 4, 2, 2, 0, 1), params, &cache);
  EXPECT_THROW(NetVladBackward(cache, params, VectorXd::Ones(5)), DimensionError);
}

TEST(NetVladInitTest, RecoversSeparatedBlobs) {
  Philox rng(21);
  std::vector<VectorXd> truth(3, VectorXd::Zero(3));
  truth[0][0] = 1;
  truth[1][1] = 1;
  truth[2][2] = 1;
  std::vector<VectorXd> samples;
  for (int i = 0; i < 300; ++i) samples.push_back(truth[i % 3] + 0.02 * testing::RandomVector(rng, 3));
  const auto params = NetVladInit(samples, 3, 50.0, 4);
  ASSERT_EQ(params.clusters(), 3u);
  for (const auto& t : truth) {
    double best = 1e9;
    for (Eigen::Index k = 0; k < 3; ++k) best = std::min(best, (params.centers.row(k).transpose() - t).norm());
    EXPECT_LT(best, 0.02);
  }
  for (Eigen::Index k = 0; k < 3; ++k) {
    EXPECT_NEAR(params.assign_weights.row(k).norm(), 50.0, 1e-9);
    EXPECT_EQ(params.assign_bias[k], 0.0);
  }
  EXPECT_THROW(NetVladInit({samples[0], samples[1]}, 3, 50.0, 4), ValidationError);
}

TEST(SampleLocalFeaturesTest, UnitNormAndCapped) {
  Philox rng(2);
  std::vector<FeatureMap> maps = {testing::RandomMap(rng, 3, 4, 4, 0.1, 1),
                                  testing::RandomMap(rng, 3, 4, 4, 0.1, 1)};
  const auto s = SampleLocalFeatures(maps, 10, 1);
  ASSERT_EQ(s.size(), 10u);
  for (const auto& v : s) EXPECT_NEAR(v.norm(), 1.0, 1e-12);
  EXPECT_EQ(SampleLocalFeatures(maps, 1000, 1).size(), 32u);
}

TEST(GemTest, PowerMeanPerChannel) {
  FeatureMap map(2, 1, 2, {1.0, 2.0, 3.0, 3.0});
  const auto r = GemForward(map, GemParams::Shared(2.0));
  EXPECT_NEAR(r.pooled[0], std::sqrt(2.5), 1e-14);
  EXPECT_NEAR(r.pooled[1], 3.0, 1e-14);
  EXPECT_NEAR(r.output.unit.norm(), 1.0, 1e-14);
}

TEST(GemTest, FloorStrictAndClamp) {
  FeatureMap map(1, 1, 2, {-1.0, 0.0});
  auto params = GemParams::Shared(2.5);
  EXPECT_NEAR(GemForward(map, params).pooled[0], kGemFloor, 1e-18);
  params.strict = true;
  EXPECT_THROW(GemForward(map, params), ValidationError);
  params.p[0] = 0.3;
  params.Clamp();
  EXPECT_EQ(params.p[0], 1.0);
  EXPECT_THROW(GemForward(map, GemParams::PerChannel(3)), DimensionError);
}

TEST(GemTest, GradientsMatchFiniteDifferences) {
  Philox rng(9);
  for (bool shared : {true, false}) {
    const auto map = testing::RandomMap(rng, 3, 2, 3, 0.1, 1);
    GemParams params = shared ? GemParams::Shared(2.7) : GemParams::PerChannel(3, 2.7);
    if (!shared) params.p << 1.5, 3.0, 4.2;
    const VectorXd w = testing::RandomVector(rng, 3);
    const auto fwd = GemForward(map, params);
    const auto g = GemBackward(map, params, fwd, w);
    const auto f_p = [&](const VectorXd& p) {
      GemParams q = params;
      q.p = p;
      return w.dot(GemForward(map, q).output.unit);
    };
    EXPECT_LT(testing::RelativeError(g.p, testing::NumericGradient(f_p, params.p)), 1e-6);
    const VectorXd flat = Eigen::Map<const VectorXd>(map.values().data(), static_cast<Eigen::Index>(map.size()));
    const auto f_in = [&](const VectorXd& v) {
      return w.dot(GemForward(FeatureMap(3, 2, 3, std::vector<double>(v.data(), v.data() + v.size())), params)
                       .output.unit);
    };
    EXPECT_LT(testing::RelativeError(g.input, testing::NumericGradient(f_in, flat)), 1e-6);
  }
}

TEST(MaxPoolTest, ArgmaxAndFirstMaximumGradient) {
  FeatureMap map(2, 1, 3, {1.0, 5.0, 5.0, -2.0, -1.0, -3.0});
  const auto r = MaxPoolForward(map);
  EXPECT_EQ(r.argmax, (std::vector<std::size_t>{1, 1}));
  EXPECT_EQ(r.pooled[1], -1.0);
  VectorXd up(2);
  up << 1.0, 0.0;
  const VectorXd g = MaxPoolBackward(map, r, up);
  EXPECT_NE(g[1], 0.0);
  EXPECT_EQ(g[2], 0.0);
  EXPECT_THROW(MaxPoolForward(FeatureMap()), DimensionError);
}

TEST(AggregationKindTest, NamesRoundTrip) {
  for (auto k : {AggregationKind::kLinear, AggregationKind::kNetVlad, AggregationKind::kGem,
                 AggregationKind::kMax}) {
    EXPECT_EQ(ParseAggregationKind(AggregationName(k)), k);
  }
  EXPECT_THROW(ParseAggregationKind("avg"), ValidationError);
}

}  // namespace
}  // namespace pairforge
