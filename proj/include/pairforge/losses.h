#pragma once

#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "pairforge/embedding.h"
#include "pairforge/mining.h"

namespace pairforge {

inline constexpr double kDefaultMargin = 0.1;
inline constexpr double kDefaultAlpha = 0.9;
inline constexpr double kNetVladAlpha = 1.35;

struct LossConfig {
  double margin = kDefaultMargin;  // m
  double alpha = kDefaultAlpha;    // negative hypersphere radius
  // Average only over terms with a non-zero hinge.
  bool nontrivial_only = true;

  void Validate() const;
};

struct LossReport {
  double value = 0;
  // One gradient per input embedding, in argument order.
  std::vector<Eigen::VectorXd> grads;
  std::size_t active_terms = 0;
  std::size_t total_terms = 0;
};

struct BatchLossReport {
  double value = 0;
  std::map<ImageId, Eigen::VectorXd> grads;
  std::size_t active_terms = 0;
  std::size_t total_terms = 0;
};

// Euclidean distance between the L2-normalized inputs. Throws
// NormalizationError on a zero-norm input and DimensionError on mismatch.
double Distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// [D(A,P) - D(A,N) + m]_+. Grads ordered (anchor, positive, negative).
LossReport TripletLoss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                       const Eigen::VectorXd& negative, const LossConfig& config);

// L1 + L2 for one query. L1 averages [alpha - D(q,n)]_+ over negatives and
// [D(q,p) - alpha + m]_+ over positives; L2 = sum over adjacent positives of
// [D(q,p_j) - D(q,p_j+1)]_+ / |P|, positives ordered by descending GS.
// Grads ordered (query, positives..., negatives...).
LossReport RankedListLoss(const Eigen::VectorXd& query,
                          std::span<const Eigen::VectorXd> positives,
                          std::span<const Eigen::VectorXd> negatives, const LossConfig& config);

// Negatives used for a batch query: explicit hard negatives when present,
// otherwise the positives of every other query.
std::vector<ImageId> NegativesFor(const TrainingBatch& batch, std::size_t query_index);

// Mean over queries of RankedListLoss(q_i, P_i, N(q_i)); gradients of images
// that play several roles are summed.
BatchLossReport BatchRankedListLoss(const TrainingBatch& batch, const Embeddings& embeddings,
                                    const LossConfig& config);

// Every (q_i, p, n) triplet with p in P_i and n in N(q_i), averaged over the
// active triplets (nontrivial_only) or over all of them.
BatchLossReport BatchTripletLoss(const TrainingBatch& batch, const Embeddings& embeddings,
                                 const LossConfig& config);

enum class LossKind { kTriplet, kRankedList };
LossKind ParseLossKind(std::string_view name);
std::string_view LossKindName(LossKind kind);

BatchLossReport BatchLoss(LossKind kind, const TrainingBatch& batch,
                          const Embeddings& embeddings, const LossConfig& config);

}  // namespace pairforge
