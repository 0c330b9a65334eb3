#include "pairforge/aggregate.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pairforge/errors.h"
#include "pairforge/random.h"

namespace pairforge {

std::string_view AggregationName(AggregationKind kind) {
  switch (kind) {
    case AggregationKind::kLinear: return "linear";
    case AggregationKind::kNetVlad: return "netvlad";
    case AggregationKind::kGem: return "gem";
    case AggregationKind::kMax: return "max";
  }
  return "unknown";
}

AggregationKind ParseAggregationKind(std::string_view name) {
  if (name == "linear") return AggregationKind::kLinear;
  if (name == "netvlad") return AggregationKind::kNetVlad;
  if (name == "gem") return AggregationKind::kGem;
  if (name == "max") return AggregationKind::kMax;
  throw ValidationError("unknown head '" + std::string(name) + "'");
}

L2Normalized L2Normalized::Of(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0) || !std::isfinite(norm)) {
    throw NormalizationError("cannot L2-normalize a zero-norm or non-finite descriptor");
  }
  return {v / norm, norm};
}

Eigen::VectorXd L2Normalized::Backward(const Eigen::VectorXd& upstream) const {
  return (upstream - unit * unit.dot(upstream)) / norm;
}

Eigen::MatrixXd LocalFeatures(const FeatureMap& map) {
  const auto d = static_cast<Eigen::Index>(map.channels());
  const auto n = static_cast<Eigen::Index>(map.pixels());
  // Channel-major storage is the row-major D x N layout.
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      map.values().data(), d, n);
}

// ---------------------------------------------------------------------------
// NetVLAD

Eigen::VectorXd NetVladForward(const FeatureMap& map, const NetVladParams& params,
                               NetVladCache* cache) {
  const auto K = static_cast<Eigen::Index>(params.clusters());
  const auto D = static_cast<Eigen::Index>(params.dim());
  if (K == 0) throw ValidationError("NetVLAD needs at least one cluster");
  if (params.assign_weights.rows() != K || params.assign_weights.cols() != D ||
      params.assign_bias.size() != K) {
    throw DimensionError("NetVLAD parameter shapes disagree");
  }
  if (static_cast<Eigen::Index>(map.channels()) != D) {
    throw DimensionError("feature map has " + std::to_string(map.channels()) +
                         " channels, NetVLAD expects " + std::to_string(D));
  }

  NetVladCache local;
  NetVladCache& c = cache ? *cache : local;
  c.unit_features = LocalFeatures(map);
  const Eigen::Index N = c.unit_features.cols();
  c.feature_norms = c.unit_features.colwise().norm().transpose();
  for (Eigen::Index i = 0; i < N; ++i) {
    // A zero feature stays zero and contributes -c_k residuals only.
    if (c.feature_norms[i] > 0) c.unit_features.col(i) /= c.feature_norms[i];
  }

  Eigen::MatrixXd scores = params.assign_weights * c.unit_features;
  scores.colwise() += params.assign_bias;
  c.assignment.resize(K, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double top = scores.col(i).maxCoeff();
    Eigen::VectorXd e = (scores.col(i).array() - top).exp();
    c.assignment.col(i) = e / e.sum();
  }

  // V_k = sum_i a_ki u_i - (sum_i a_ki) c_k
  const Eigen::VectorXd mass = c.assignment.rowwise().sum();
  c.residuals = c.assignment * c.unit_features.transpose();
  c.residuals -= mass.asDiagonal() * params.centers;
  c.residual_norms = c.residuals.rowwise().norm();

  c.flat.resize(K * D);
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::VectorXd block = c.residuals.row(k).transpose();
    if (params.intra_normalize && c.residual_norms[k] > 0) block /= c.residual_norms[k];
    c.flat.segment(k * D, D) = block;
  }
  c.output = L2Normalized::Of(c.flat);
  return c.output.unit;
}

NetVladGrads NetVladBackward(const NetVladCache& cache, const NetVladParams& params,
                             const Eigen::VectorXd& upstream) {
  const auto K = static_cast<Eigen::Index>(params.clusters());
  const auto D = static_cast<Eigen::Index>(params.dim());
  const Eigen::Index N = cache.unit_features.cols();
  if (upstream.size() != K * D) throw DimensionError("NetVLAD upstream gradient size mismatch");

  const Eigen::VectorXd g_flat = cache.output.Backward(upstream);
  Eigen::MatrixXd g_v(K, D);
  for (Eigen::Index k = 0; k < K; ++k) {
    Eigen::VectorXd g = g_flat.segment(k * D, D);
    const double r = cache.residual_norms[k];
    if (params.intra_normalize) {
      if (r > 0) {
        const Eigen::VectorXd vh = cache.residuals.row(k).transpose() / r;
        g = (g - vh * vh.dot(g)) / r;
      } else {
        g.setZero();
      }
    }
    g_v.row(k) = g.transpose();
  }

  NetVladGrads grads;
  const Eigen::VectorXd mass = cache.assignment.rowwise().sum();
  grads.centers = -(mass.asDiagonal() * g_v);

  // dL/da_ki = g_v_k . (u_i - c_k)
  Eigen::MatrixXd g_a = g_v * cache.unit_features;
  g_a.colwise() -= (g_v.cwiseProduct(params.centers)).rowwise().sum();

  Eigen::MatrixXd g_s(K, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double inner = cache.assignment.col(i).dot(g_a.col(i));
    g_s.col(i) = cache.assignment.col(i).cwiseProduct(g_a.col(i).array().matrix() -
                                                      Eigen::VectorXd::Constant(K, inner));
  }
  grads.assign_weights = g_s * cache.unit_features.transpose();
  grads.assign_bias = g_s.rowwise().sum();

  const Eigen::MatrixXd g_u =
      g_v.transpose() * cache.assignment + params.assign_weights.transpose() * g_s;
  grads.input.resize(D, N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double n = cache.feature_norms[i];
    if (n > 0) {
      const auto u = cache.unit_features.col(i);
      grads.input.col(i) = (g_u.col(i) - u * u.dot(g_u.col(i))) / n;
    } else {
      grads.input.col(i).setZero();
    }
  }
  return grads;
}

NetVladParams NetVladInit(const std::vector<Eigen::VectorXd>& samples, std::size_t clusters,
                          double sharpness, std::uint64_t seed) {
  if (clusters == 0) throw ValidationError("NetVLAD needs at least one cluster");
  if (samples.size() < clusters) {
    throw ValidationError("k-means needs at least " + std::to_string(clusters) +
                          " samples, got " + std::to_string(samples.size()));
  }
  if (!(sharpness > 0)) throw ValidationError("sharpness must be positive");
  const Eigen::Index dim = samples.front().size();
  for (const auto& s : samples) {
    if (s.size() != dim) throw DimensionError("k-means samples differ in dimension");
  }
  const std::size_t n = samples.size();
  const auto K = static_cast<Eigen::Index>(clusters);

  // k-means++ seeding.
  Philox rng(seed);
  Eigen::MatrixXd centers(K, dim);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  std::size_t pick = rng.UniformInt(n);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (k > 0) {
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) total += d2[i];
      if (total > 0) {
        double target = rng.Uniform() * total;
        pick = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (d2[i] <= 0) continue;
          pick = i;
          target -= d2[i];
          if (target < 0) break;
        }
      } else {
        // Every remaining sample duplicates a center.
        std::vector<std::size_t> free;
        for (std::size_t i = 0; i < n; ++i) {
          if (!chosen[i]) free.push_back(i);
        }
        pick = free[rng.UniformInt(free.size())];
      }
    }
    chosen[pick] = true;
    centers.row(k) = samples[pick].transpose();
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (samples[i] - samples[pick]).squaredNorm());
    }
  }

  // Lloyd iterations.
  std::vector<Eigen::Index> label(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < K; ++k) {
        const double d = (centers.row(k).transpose() - samples[i]).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (label[i] != best) {
        label[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(K, dim);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(label[i]) += samples[i].transpose();
      counts[label[i]] += 1;
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      if (counts[k] > 0) centers.row(k) = sums.row(k) / counts[k];
    }
  }

  NetVladParams params;
  params.centers = centers;
  params.sharpness = sharpness;
  params.assign_weights = Eigen::MatrixXd::Zero(K, dim);
  for (Eigen::Index k = 0; k < K; ++k) {
    const double norm = centers.row(k).norm();
    if (norm > 0) params.assign_weights.row(k) = sharpness * centers.row(k) / norm;
  }
  params.assign_bias = Eigen::VectorXd::Zero(K);
  return params;
}

std::vector<Eigen::VectorXd> SampleLocalFeatures(const std::vector<FeatureMap>& maps,
                                                 std::size_t max_samples, std::uint64_t seed) {
  std::vector<Eigen::VectorXd> all;
  for (const auto& map : maps) {
    const Eigen::MatrixXd x = LocalFeatures(map);
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const double norm = x.col(i).norm();
      if (norm > 0) all.push_back(x.col(i) / norm);
    }
  }
  if (all.size() <= max_samples) return all;
  Philox rng(seed);
  auto picks = rng.SampleWithoutReplacement(all.size(), max_samples);
  std::sort(picks.begin(), picks.end());
  std::vector<Eigen::VectorXd> out;
  out.reserve(picks.size());
  for (std::size_t i : picks) out.push_back(std::move(all[i]));
  return out;
}

// ---------------------------------------------------------------------------
// GeM

GemParams GemParams::Shared(double p) {
  GemParams params;
  params.p = Eigen::VectorXd::Constant(1, p);
  return params;
}

GemParams GemParams::PerChannel(std::size_t channels, double p) {
  GemParams params;
  params.p = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(channels), p);
  return params;
}

void GemParams::Clamp() { p = p.cwiseMax(1.0); }

namespace {

void CheckGemShape(const FeatureMap& map, const GemParams& params) {
  if (map.size() == 0) throw DimensionError("empty feature map");
  if (params.p.size() != 1 && static_cast<std::size_t>(params.p.size()) != map.channels()) {
    throw DimensionError("GeM has " + std::to_string(params.p.size()) + " exponents for " +
                         std::to_string(map.channels()) + " channels");
  }
}

// Power mean of one channel in log space, plus the softmax-like weights
// w_j = u_j^p / sum u^p used by the backward pass.
struct GemChannel {
  double value = 0;
  double log_value = 0;
  std::vector<double> weights;
  std::vector<double> logs;
};

GemChannel PowerMean(const double* values, std::size_t count, double p, bool strict) {
  GemChannel c;
  c.logs.resize(count);
  const bool integral = p == std::floor(p);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < count; ++j) {
    if (strict && values[j] <= 0 && !integral) {
      throw ValidationError("GeM with non-integer p on non-positive activation " +
                            std::to_string(values[j]));
    }
    c.logs[j] = std::log(std::max(values[j], kGemFloor));
    top = std::max(top, p * c.logs[j]);
  }
  c.weights.resize(count);
  double sum = 0;
  for (std::size_t j = 0; j < count; ++j) {
    c.weights[j] = std::exp(p * c.logs[j] - top);
    sum += c.weights[j];
  }
  for (double& w : c.weights) w /= sum;
  c.log_value = (top + std::log(sum / static_cast<double>(count))) / p;
  c.value = std::exp(c.log_value);
  if (p == 1.0) {
    // Plain average: skip the log round trip.
    double mean = 0;
    for (std::size_t j = 0; j < count; ++j) mean += std::max(values[j], kGemFloor);
    c.value = mean / static_cast<double>(count);
    c.log_value = std::log(c.value);
  }
  return c;
}

}  // namespace

PooledDescriptor GemForward(const FeatureMap& map, const GemParams& params) {
  CheckGemShape(map, params);
  const std::size_t n = map.pixels();
  PooledDescriptor out;
  out.pooled.resize(static_cast<Eigen::Index>(map.channels()));
  for (std::size_t d = 0; d < map.channels(); ++d) {
    out.pooled[static_cast<Eigen::Index>(d)] =
        PowerMean(map.values().data() + d * n, n, params.PowerFor(d), params.strict).value;
  }
  out.output = L2Normalized::Of(out.pooled);
  return out;
}

GemGrads GemBackward(const FeatureMap& map, const GemParams& params,
                     const PooledDescriptor& forward, const Eigen::VectorXd& upstream) {
  CheckGemShape(map, params);
  if (upstream.size() != forward.pooled.size()) {
    throw DimensionError("GeM upstream gradient size mismatch");
  }
  const Eigen::VectorXd g_pooled = forward.output.Backward(upstream);
  const std::size_t n = map.pixels();
  GemGrads grads;
  grads.input = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(map.size()));
  grads.p = Eigen::VectorXd::Zero(params.p.size());
  for (std::size_t d = 0; d < map.channels(); ++d) {
    const double p = params.PowerFor(d);
    const double* values = map.values().data() + d * n;
    const GemChannel c = PowerMean(values, n, p, params.strict);
    const double g = g_pooled[static_cast<Eigen::Index>(d)];
    double weighted_log = 0;
    for (std::size_t j = 0; j < n; ++j) {
      weighted_log += c.weights[j] * c.logs[j];
      if (values[j] > kGemFloor) {
        grads.input[static_cast<Eigen::Index>(d * n + j)] = g * c.value * c.weights[j] / values[j];
      }
    }
    // df/dp = f/p * (sum_j w_j ln u_j - ln f)
    const double g_p = g * c.value / p * (weighted_log - c.log_value);
    grads.p[params.p.size() == 1 ? 0 : static_cast<Eigen::Index>(d)] += g_p;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Max pooling

MaxPoolResult MaxPoolForward(const FeatureMap& map) {
  if (map.size() == 0) throw DimensionError("empty feature map");
  const std::size_t n = map.pixels();
  MaxPoolResult out;
  out.pooled.resize(static_cast<Eigen::Index>(map.channels()));
  out.argmax.resize(map.channels());
  for (std::size_t d = 0; d < map.channels(); ++d) {
    const double* values = map.values().data() + d * n;
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (values[j] > values[best]) best = j;
    }
    out.argmax[d] = best;
    out.pooled[static_cast<Eigen::Index>(d)] = values[best];
  }
  out.output = L2Normalized::Of(out.pooled);
  return out;
}

Eigen::VectorXd MaxPoolBackward(const FeatureMap& map, const MaxPoolResult& forward,
                                const Eigen::VectorXd& upstream) {
  if (upstream.size() != forward.pooled.size()) {
    throw DimensionError("max-pool upstream gradient size mismatch");
  }
  const Eigen::VectorXd g_pooled = forward.output.Backward(upstream);
  const std::size_t n = map.pixels();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(map.size()));
  for (std::size_t d = 0; d < map.channels(); ++d) {
    g[static_cast<Eigen::Index>(d * n + forward.argmax[d])] = g_pooled[static_cast<Eigen::Index>(d)];
  }
  return g;
}

}  // namespace pairforge
