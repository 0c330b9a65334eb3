#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pairforge/embedding.h"
#include "pairforge/head.h"
#include "pairforge/model.h"

namespace pairforge {

inline constexpr std::size_t kDefaultRetrievalNumber = 30;
inline constexpr std::size_t kDefaultInlierThreshold = 15;

struct Neighbor {
  std::string name;
  double distance = 0;
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct QueryResult {
  std::string query;
  std::vector<Neighbor> neighbors;  // distance non-decreasing, ties by name
  friend bool operator==(const QueryResult&, const QueryResult&) = default;
};

struct RetrievalResult {
  std::vector<QueryResult> queries;
  friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

// Exact k nearest neighbors by Euclidean distance; a corpus entry named like
// the query is skipped. Requires k < corpus size.
RetrievalResult BruteForceKnn(const DescriptorSet& queries, const DescriptorSet& corpus,
                              std::size_t k);

struct HnswConfig {
  std::size_t max_degree = 16;        // M; layer 0 keeps 2M
  std::size_t ef_construction = 200;
  std::size_t ef_search = 64;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Layered navigable small-world graph over a descriptor set.
class HnswIndex {
 public:
  static HnswIndex Build(const DescriptorSet& corpus, const HnswConfig& config = {});

  // k approximate neighbors of v; the corpus entry named `exclude` never
  // enters the result set.
  std::vector<Neighbor> Search(const Eigen::VectorXd& v, std::size_t k,
                               std::string_view exclude = {}) const;
  RetrievalResult Query(const DescriptorSet& queries, std::size_t k) const;

  const HnswConfig& config() const { return config_; }
  void set_ef_search(std::size_t ef) { config_.ef_search = ef; }
  std::size_t size() const { return names_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(data_.cols()); }
  int max_level() const { return max_level_; }
  // Neighbors of node i on a layer, for inspection.
  const std::vector<std::uint32_t>& Links(std::size_t node, int level) const;

  std::string Serialize() const;
  static HnswIndex Parse(std::string_view bytes);

 private:
  using Candidate = std::pair<double, std::uint32_t>;

  double Dist(const Eigen::VectorXd& v, std::uint32_t node) const;
  std::vector<Candidate> SearchLayer(const Eigen::VectorXd& v, std::vector<Candidate> entry,
                                     std::size_t ef, int level, std::int64_t exclude) const;
  std::vector<std::uint32_t> SelectNeighbors(const std::vector<Candidate>& candidates,
                                             std::size_t m) const;
  void Insert(std::uint32_t node, int level);
  std::size_t Capacity(int level) const {
    return level == 0 ? 2 * config_.max_degree : config_.max_degree;
  }

  HnswConfig config_;
  std::vector<std::string> names_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;  // node, level, neighbors
  std::int64_t entry_ = -1;
  int max_level_ = -1;
};

void WriteIndexFile(const std::string& path, const HnswIndex& index);
HnswIndex ReadIndexFile(const std::string& path);

// Fraction of exact top-k neighbors recovered by approx, over all queries.
double RecallAtK(const RetrievalResult& approx, const RetrievalResult& exact);

// `<query> <candidate> <rank> <distance>` lines, rank starting at 1.
std::string WritePairs(const RetrievalResult& result);
RetrievalResult ParsePairs(std::string_view content);

// Canonical (lexicographically ordered) name pairs.
class GroundTruth {
 public:
  GroundTruth() = default;
  static GroundTruth FromMatches(const MatchSet& matches, const ImageNames& names,
                                 std::size_t inlier_threshold = kDefaultInlierThreshold);

  void Add(const std::string& a, const std::string& b);
  bool Contains(const std::string& a, const std::string& b) const;
  std::size_t size() const { return pairs_.size(); }

 private:
  std::set<std::pair<std::string, std::string>> pairs_;
};

struct AccuracyReport {
  double accuracy = 0;
  std::size_t pairs = 0;    // distinct retrieved pairs
  std::size_t correct = 0;  // of those, in the ground truth

  // "accuracy=<a> pairs=<n> correct=<c>"
  std::string Format() const;
};

// N(MP intersect RP) / N(RP) over unordered retrieved pairs; 0 when nothing
// was retrieved.
AccuracyReport RetrievalAccuracy(const RetrievalResult& result, const GroundTruth& truth);

struct TimingReport {
  double t_feature_extraction = 0;  // wall seconds
  double t_nn_search = 0;
  double cpu_feature_extraction = 0;  // summed CPU seconds
  double cpu_nn_search = 0;

  double total() const { return t_feature_extraction + t_nn_search; }
  std::string Format() const;
};

struct PipelineResult {
  RetrievalResult result;
  TimingReport timing;
  DescriptorSet descriptors;
};

// Head forward passes (T_fe) then index build and queries (T_nns). k is
// truncated to corpus size - 1.
PipelineResult TimedPipeline(const std::vector<std::pair<std::string, FeatureMap>>& maps,
                             const Head& head, const HnswConfig& config, std::size_t k);
// Precomputed descriptors: T_fe is 0.
PipelineResult TimedPipeline(const DescriptorSet& descriptors, const HnswConfig& config,
                             std::size_t k);

}  // namespace pairforge
