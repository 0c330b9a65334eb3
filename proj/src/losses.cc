#include "pairforge/losses.h"

#include <string>

#include "pairforge/errors.h"

namespace pairforge {
namespace {

struct Unit {
  Eigen::VectorXd dir;
  double norm = 0;
};

Unit Normalize(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0) || !std::isfinite(norm)) {
    throw NormalizationError("cannot L2-normalize a zero-norm or non-finite embedding");
  }
  return {v / norm, norm};
}

// Gradient w.r.t. the raw vector given the gradient w.r.t. its unit vector.
Eigen::VectorXd ThroughNormalization(const Unit& u, const Eigen::VectorXd& g_unit) {
  return (g_unit - u.dir * u.dir.dot(g_unit)) / u.norm;
}

// Adds coeff * dD/du and coeff * dD/dw for D = ||u - w||. At D == 0 the
// subgradient is 0.
void AccumulateDistanceGrad(const Unit& u, const Unit& w, double distance, double coeff,
                            Eigen::VectorXd* g_u, Eigen::VectorXd* g_w) {
  if (distance <= 0 || coeff == 0) return;
  const Eigen::VectorXd dir = (u.dir - w.dir) * (coeff / distance);
  *g_u += dir;
  *g_w -= dir;
}

void CheckDims(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) {
    throw DimensionError("embedding dimensions differ: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
}

}  // namespace

void LossConfig::Validate() const {
  if (!(margin >= 0)) throw ValidationError("margin must be >= 0");
  if (!(alpha - margin > 0)) {
    throw ValidationError("alpha must exceed the margin (positive radius alpha - m > 0)");
  }
}

double Distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  CheckDims(a, b);
  return (Normalize(a).dir - Normalize(b).dir).norm();
}

LossReport TripletLoss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                       const Eigen::VectorXd& negative, const LossConfig& config) {
  CheckDims(anchor, positive);
  CheckDims(anchor, negative);
  const Unit a = Normalize(anchor), p = Normalize(positive), n = Normalize(negative);
  const double dap = (a.dir - p.dir).norm();
  const double dan = (a.dir - n.dir).norm();
  const double hinge = dap - dan + config.margin;

  LossReport report;
  report.total_terms = 1;
  Eigen::VectorXd ga = Eigen::VectorXd::Zero(anchor.size());
  Eigen::VectorXd gp = ga, gn = ga;
  if (hinge > 0) {
    report.value = hinge;
    report.active_terms = 1;
    AccumulateDistanceGrad(a, p, dap, 1.0, &ga, &gp);
    AccumulateDistanceGrad(a, n, dan, -1.0, &ga, &gn);
  }
  report.grads = {ThroughNormalization(a, ga), ThroughNormalization(p, gp),
                  ThroughNormalization(n, gn)};
  return report;
}

LossReport RankedListLoss(const Eigen::VectorXd& query,
                          std::span<const Eigen::VectorXd> positives,
                          std::span<const Eigen::VectorXd> negatives, const LossConfig& config) {
  if (positives.empty()) throw ValidationError("ranked list loss needs at least one positive");
  for (const auto& p : positives) CheckDims(query, p);
  for (const auto& n : negatives) CheckDims(query, n);

  const Unit q = Normalize(query);
  std::vector<Unit> pos, neg;
  std::vector<double> dp, dn;
  for (const auto& p : positives) {
    pos.push_back(Normalize(p));
    dp.push_back((q.dir - pos.back().dir).norm());
  }
  for (const auto& n : negatives) {
    neg.push_back(Normalize(n));
    dn.push_back((q.dir - neg.back().dir).norm());
  }

  // Hinge activity and the L1 denominator.
  std::vector<double> pos_hinge(pos.size()), neg_hinge(neg.size());
  std::size_t active_l1 = 0;
  for (std::size_t j = 0; j < pos.size(); ++j) {
    pos_hinge[j] = dp[j] - config.alpha + config.margin;
    active_l1 += pos_hinge[j] > 0;
  }
  for (std::size_t k = 0; k < neg.size(); ++k) {
    neg_hinge[k] = config.alpha - dn[k];
    active_l1 += neg_hinge[k] > 0;
  }
  const double l1_den = config.nontrivial_only
                            ? static_cast<double>(std::max<std::size_t>(1, active_l1))
                            : static_cast<double>(pos.size() + neg.size());
  const double l2_den = static_cast<double>(pos.size());

  LossReport report;
  report.total_terms = pos.size() + neg.size() + (pos.size() - 1);
  report.active_terms = active_l1;

  // dL/dD per distance.
  std::vector<double> coeff_p(pos.size(), 0.0), coeff_n(neg.size(), 0.0);
  for (std::size_t j = 0; j < pos.size(); ++j) {
    if (pos_hinge[j] > 0) {
      report.value += pos_hinge[j] / l1_den;
      coeff_p[j] += 1.0 / l1_den;
    }
  }
  for (std::size_t k = 0; k < neg.size(); ++k) {
    if (neg_hinge[k] > 0) {
      report.value += neg_hinge[k] / l1_den;
      coeff_n[k] -= 1.0 / l1_den;
    }
  }
  for (std::size_t j = 0; j + 1 < pos.size(); ++j) {
    const double h = dp[j] - dp[j + 1];
    if (h > 0) {
      report.value += h / l2_den;
      coeff_p[j] += 1.0 / l2_den;
      coeff_p[j + 1] -= 1.0 / l2_den;
      ++report.active_terms;
    }
  }

  const auto dim = query.size();
  Eigen::VectorXd gq = Eigen::VectorXd::Zero(dim);
  std::vector<Eigen::VectorXd> gp(pos.size(), Eigen::VectorXd::Zero(dim));
  std::vector<Eigen::VectorXd> gn(neg.size(), Eigen::VectorXd::Zero(dim));
  for (std::size_t j = 0; j < pos.size(); ++j) {
    AccumulateDistanceGrad(q, pos[j], dp[j], coeff_p[j], &gq, &gp[j]);
  }
  for (std::size_t k = 0; k < neg.size(); ++k) {
    AccumulateDistanceGrad(q, neg[k], dn[k], coeff_n[k], &gq, &gn[k]);
  }
  report.grads.reserve(1 + pos.size() + neg.size());
  report.grads.push_back(ThroughNormalization(q, gq));
  for (std::size_t j = 0; j < pos.size(); ++j) {
    report.grads.push_back(ThroughNormalization(pos[j], gp[j]));
  }
  for (std::size_t k = 0; k < neg.size(); ++k) {
    report.grads.push_back(ThroughNormalization(neg[k], gn[k]));
  }
  return report;
}

std::vector<ImageId> NegativesFor(const TrainingBatch& batch, std::size_t query_index) {
  const auto& hard = batch.queries[query_index].hard_negatives;
  return hard.empty() ? batch.NegativesOf(query_index) : hard;
}

namespace {

const Eigen::VectorXd& Lookup(const Embeddings& embeddings, ImageId id) {
  const auto it = embeddings.find(id);
  if (it == embeddings.end()) {
    throw ValidationError("no embedding for batch member " + std::to_string(id.value));
  }
  return it->second;
}

void AddGrad(BatchLossReport* report, ImageId id, const Eigen::VectorXd& g, double scale) {
  auto it = report->grads.find(id);
  if (it == report->grads.end()) {
    report->grads.emplace(id, g * scale);
  } else {
    it->second += g * scale;
  }
}

void ZeroGrads(const TrainingBatch& batch, const Embeddings& embeddings,
               BatchLossReport* report) {
  for (ImageId id : batch.Members()) {
    report->grads.emplace(id, Eigen::VectorXd::Zero(Lookup(embeddings, id).size()));
  }
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    for (ImageId id : NegativesFor(batch, i)) {
      report->grads.emplace(id, Eigen::VectorXd::Zero(Lookup(embeddings, id).size()));
    }
  }
}

}  // namespace

BatchLossReport BatchRankedListLoss(const TrainingBatch& batch, const Embeddings& embeddings,
                                    const LossConfig& config) {
  config.Validate();
  if (batch.queries.empty()) throw ValidationError("empty batch");
  BatchLossReport report;
  ZeroGrads(batch, embeddings, &report);
  const double scale = 1.0 / static_cast<double>(batch.queries.size());
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    const auto& q = batch.queries[i];
    std::vector<Eigen::VectorXd> pos, neg;
    for (const auto& p : q.positives) pos.push_back(Lookup(embeddings, p.image));
    const auto negatives = NegativesFor(batch, i);
    for (ImageId n : negatives) neg.push_back(Lookup(embeddings, n));
    const LossReport r = RankedListLoss(Lookup(embeddings, q.query), pos, neg, config);
    report.value += r.value * scale;
    report.active_terms += r.active_terms;
    report.total_terms += r.total_terms;
    AddGrad(&report, q.query, r.grads[0], scale);
    for (std::size_t j = 0; j < pos.size(); ++j) {
      AddGrad(&report, q.positives[j].image, r.grads[1 + j], scale);
    }
    for (std::size_t k = 0; k < neg.size(); ++k) {
      AddGrad(&report, negatives[k], r.grads[1 + pos.size() + k], scale);
    }
  }
  return report;
}

BatchLossReport BatchTripletLoss(const TrainingBatch& batch, const Embeddings& embeddings,
                                 const LossConfig& config) {
  config.Validate();
  if (batch.queries.empty()) throw ValidationError("empty batch");
  BatchLossReport report;
  ZeroGrads(batch, embeddings, &report);

  struct Term {
    ImageId a, p, n;
    LossReport r;
  };
  std::vector<Term> active;
  for (std::size_t i = 0; i < batch.queries.size(); ++i) {
    const auto& q = batch.queries[i];
    const auto& fa = Lookup(embeddings, q.query);
    for (const auto& p : q.positives) {
      const auto& fp = Lookup(embeddings, p.image);
      for (ImageId n : NegativesFor(batch, i)) {
        LossReport r = TripletLoss(fa, fp, Lookup(embeddings, n), config);
        ++report.total_terms;
        if (r.active_terms > 0) active.push_back({q.query, p.image, n, std::move(r)});
      }
    }
  }
  report.active_terms = active.size();
  const double den = config.nontrivial_only
                         ? static_cast<double>(std::max<std::size_t>(1, active.size()))
                         : static_cast<double>(std::max<std::size_t>(1, report.total_terms));
  for (const auto& t : active) {
    report.value += t.r.value / den;
    AddGrad(&report, t.a, t.r.grads[0], 1.0 / den);
    AddGrad(&report, t.p, t.r.grads[1], 1.0 / den);
    AddGrad(&report, t.n, t.r.grads[2], 1.0 / den);
  }
  return report;
}

LossKind ParseLossKind(std::string_view name) {
  if (name == "triplet") return LossKind::kTriplet;
  if (name == "rll" || name == "ranked-list") return LossKind::kRankedList;
  throw ValidationError("unknown loss '" + std::string(name) + "'");
}

std::string_view LossKindName(LossKind kind) {
  return kind == LossKind::kTriplet ? "triplet" : "rll";
}

BatchLossReport BatchLoss(LossKind kind, const TrainingBatch& batch,
                          const Embeddings& embeddings, const LossConfig& config) {
  return kind == LossKind::kTriplet ? BatchTripletLoss(batch, embeddings, config)
                                    : BatchRankedListLoss(batch, embeddings, config);
}

}  // namespace pairforge
