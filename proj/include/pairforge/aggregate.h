#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pairforge/model.h"

namespace pairforge {

enum class AggregationKind { kLinear, kNetVlad, kGem, kMax };

std::string_view AggregationName(AggregationKind kind);
AggregationKind ParseAggregationKind(std::string_view name);

struct GlobalDescriptor {
  Eigen::VectorXd vector;  // unit norm
  AggregationKind kind = AggregationKind::kMax;
  std::string source;
};

// Unit vector and the backward map of v -> v / ||v||.
struct L2Normalized {
  Eigen::VectorXd unit;
  double norm = 0;

  static L2Normalized Of(const Eigen::VectorXd& v);  // throws NormalizationError
  Eigen::VectorXd Backward(const Eigen::VectorXd& upstream) const;
};

// Local features of a map: column i is pixel i = h * W + w.
Eigen::MatrixXd LocalFeatures(const FeatureMap& map);

// ---------------------------------------------------------------------------
// NetVLAD: soft assignment a_k(x) = softmax_k(w_k . x + b_k) over L2-normalized
// local features, residual sums V_k = sum_i a_k(x_i) (x_i - c_k), optional
// per-cluster normalization, then a global L2 normalization. Output layout is
// cluster-major (K blocks of D).

inline constexpr std::size_t kDefaultClusters = 64;
inline constexpr double kDefaultSharpness = 100.0;

struct NetVladParams {
  Eigen::MatrixXd centers;         // K x D
  Eigen::MatrixXd assign_weights;  // K x D
  Eigen::VectorXd assign_bias;     // K
  double sharpness = kDefaultSharpness;
  bool intra_normalize = true;

  std::size_t clusters() const { return static_cast<std::size_t>(centers.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(centers.cols()); }
};

struct NetVladCache {
  Eigen::MatrixXd unit_features;  // D x N
  Eigen::VectorXd feature_norms;  // N
  Eigen::MatrixXd assignment;     // K x N
  Eigen::MatrixXd residuals;      // K x D, rows V_k
  Eigen::VectorXd residual_norms; // K
  Eigen::VectorXd flat;           // K*D, after intra-normalization
  L2Normalized output;
};

struct NetVladGrads {
  Eigen::MatrixXd centers;
  Eigen::MatrixXd assign_weights;
  Eigen::VectorXd assign_bias;
  Eigen::MatrixXd input;  // D x N, same layout as LocalFeatures
};

Eigen::VectorXd NetVladForward(const FeatureMap& map, const NetVladParams& params,
                               NetVladCache* cache = nullptr);
NetVladGrads NetVladBackward(const NetVladCache& cache, const NetVladParams& params,
                             const Eigen::VectorXd& upstream);

// k-means++ seeding then Lloyd iterations (cap 100) on the samples; assignment
// weights w_k = sharpness * c_k / ||c_k||, bias 0.
NetVladParams NetVladInit(const std::vector<Eigen::VectorXd>& samples, std::size_t clusters,
                          double sharpness, std::uint64_t seed);

// Up to max_samples L2-normalized local features drawn across maps.
std::vector<Eigen::VectorXd> SampleLocalFeatures(const std::vector<FeatureMap>& maps,
                                                 std::size_t max_samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// GeM: f_k = (mean_x x^p_k)^(1/p_k) per channel, then L2 normalization.
// Activations are clamped at kGemFloor from below; with strict set,
// non-positive activations raise instead when p is not an integer.

inline constexpr double kGemFloor = 1e-6;
inline constexpr double kDefaultGemPower = 3.0;

struct GemParams {
  Eigen::VectorXd p;  // one shared exponent or one per channel
  bool strict = false;

  static GemParams Shared(double p = kDefaultGemPower);
  static GemParams PerChannel(std::size_t channels, double p = kDefaultGemPower);
  double PowerFor(std::size_t channel) const {
    return p.size() == 1 ? p[0] : p[static_cast<Eigen::Index>(channel)];
  }
  // Keeps every exponent >= 1.
  void Clamp();
};

struct PooledDescriptor {
  Eigen::VectorXd pooled;  // before normalization
  L2Normalized output;
};

struct GemGrads {
  Eigen::VectorXd input;  // D*H*W, channel-major
  Eigen::VectorXd p;      // same size as GemParams::p
};

PooledDescriptor GemForward(const FeatureMap& map, const GemParams& params);
GemGrads GemBackward(const FeatureMap& map, const GemParams& params,
                     const PooledDescriptor& forward, const Eigen::VectorXd& upstream);

// Max pooling per channel; the gradient goes to the first maximum.
struct MaxPoolResult : PooledDescriptor {
  std::vector<std::size_t> argmax;  // pixel index per channel
};

MaxPoolResult MaxPoolForward(const FeatureMap& map);
Eigen::VectorXd MaxPoolBackward(const FeatureMap& map, const MaxPoolResult& forward,
                                const Eigen::VectorXd& upstream);

}  // namespace pairforge
