#include "pairforge/retrieval.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "pairforge/errors.h"
#include "pairforge/io.h"
#include "pairforge/random.h"
#include "pairforge/text.h"

namespace pairforge {
namespace {

Eigen::Map<const Eigen::VectorXd> AsVector(const std::vector<double>& v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

bool NeighborLess(const Neighbor& a, const Neighbor& b) {
  return a.distance != b.distance ? a.distance < b.distance : a.name < b.name;
}

}  // namespace

RetrievalResult BruteForceKnn(const DescriptorSet& queries, const DescriptorSet& corpus,
                              std::size_t k) {
  if (k >= corpus.size()) {
    throw ValidationError("k = " + std::to_string(k) + " must be below the corpus size " +
                          std::to_string(corpus.size()));
  }
  if (!queries.empty() && queries.dim() != corpus.dim()) {
    throw DimensionError("query dimension " + std::to_string(queries.dim()) +
                         " differs from corpus dimension " + std::to_string(corpus.dim()));
  }
  RetrievalResult result;
  for (const auto& q : queries.entries()) {
    const auto qv = AsVector(q.vector);
    std::vector<Neighbor> all;
    all.reserve(corpus.size());
    for (const auto& c : corpus.entries()) {
      if (c.name == q.name) continue;
      all.push_back({c.name, (AsVector(c.vector) - qv).norm()});
    }
    const std::size_t n = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                      NeighborLess);
    all.resize(n);
    result.queries.push_back({q.name, std::move(all)});
  }
  return result;
}

// ---------------------------------------------------------------------------
// HNSW

void HnswConfig::Validate() const {
  if (max_degree < 2) throw ValidationError("HNSW max degree must be >= 2");
  if (ef_construction < 1 || ef_search < 1) throw ValidationError("HNSW beam widths must be >= 1");
}

double HnswIndex::Dist(const Eigen::VectorXd& v, std::uint32_t node) const {
  return (data_.row(node).transpose() - v).norm();
}

const std::vector<std::uint32_t>& HnswIndex::Links(std::size_t node, int level) const {
  return links_.at(node).at(static_cast<std::size_t>(level));
}

std::vector<HnswIndex::Candidate> HnswIndex::SearchLayer(const Eigen::VectorXd& v,
                                                         std::vector<Candidate> entry,
                                                         std::size_t ef, int level,
                                                         std::int64_t exclude) const {
  std::vector<char> visited(names_.size(), 0);
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
  std::priority_queue<Candidate> best;  // furthest on top
  for (const auto& e : entry) {
    if (visited[e.second]) continue;
    visited[e.second] = 1;
    frontier.push(e);
    if (static_cast<std::int64_t>(e.second) != exclude) best.push(e);
  }
  while (best.size() > ef) best.pop();
  while (!frontier.empty()) {
    const Candidate c = frontier.top();
    frontier.pop();
    if (best.size() >= ef && c.first > best.top().first) break;
    const auto& node_links = links_[c.second];
    if (static_cast<std::size_t>(level) >= node_links.size()) continue;
    for (std::uint32_t nb : node_links[static_cast<std::size_t>(level)]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      const Candidate cand{Dist(v, nb), nb};
      if (best.size() < ef || cand < best.top()) {
        frontier.push(cand);
        if (static_cast<std::int64_t>(nb) != exclude) {
          best.push(cand);
          if (best.size() > ef) best.pop();
        }
      }
    }
  }
  std::vector<Candidate> out;
  out.reserve(best.size());
  while (!best.empty()) {
    out.push_back(best.top());
    best.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

// Diversity heuristic: keep a candidate only if it is closer to the base
// than to every kept neighbor, then top up with the pruned ones.
std::vector<std::uint32_t> HnswIndex::SelectNeighbors(const std::vector<Candidate>& candidates,
                                                      std::size_t m) const {
  std::vector<std::uint32_t> kept;
  std::vector<std::uint32_t> pruned;
  for (const auto& [d, id] : candidates) {
    if (kept.size() >= m) break;
    bool diverse = true;
    for (std::uint32_t s : kept) {
      if ((data_.row(s) - data_.row(id)).norm() < d) {
        diverse = false;
        break;
      }
    }
    (diverse ? kept : pruned).push_back(id);
  }
  for (std::size_t i = 0; i < pruned.size() && kept.size() < m; ++i) kept.push_back(pruned[i]);
  return kept;
}

void HnswIndex::Insert(std::uint32_t node, int level) {
  links_[node].resize(static_cast<std::size_t>(level) + 1);
  if (entry_ < 0) {
    entry_ = node;
    max_level_ = level;
    return;
  }
  const Eigen::VectorXd v = data_.row(node).transpose();
  const auto entry_node = static_cast<std::uint32_t>(entry_);
  std::vector<Candidate> ep{{Dist(v, entry_node), entry_node}};
  for (int l = max_level_; l > level; --l) ep = SearchLayer(v, ep, 1, l, -1);
  for (int l = std::min(level, max_level_); l >= 0; --l) {
    const auto w = SearchLayer(v, ep, config_.ef_construction, l, -1);
    const auto lvl = static_cast<std::size_t>(l);
    links_[node][lvl] = SelectNeighbors(w, config_.max_degree);
    for (std::uint32_t nb : links_[node][lvl]) {
      auto& back = links_[nb][lvl];
      back.push_back(node);
      if (back.size() > Capacity(l)) {
        std::vector<Candidate> cands;
        const Eigen::VectorXd nv = data_.row(nb).transpose();
        for (std::uint32_t x : back) cands.emplace_back(Dist(nv, x), x);
        std::sort(cands.begin(), cands.end());
        back = SelectNeighbors(cands, Capacity(l));
      }
    }
    ep = w;
  }
  if (level > max_level_) {
    entry_ = node;
    max_level_ = level;
  }
}

HnswIndex HnswIndex::Build(const DescriptorSet& corpus, const HnswConfig& config) {
  config.Validate();
  if (corpus.empty()) throw ValidationError("cannot index an empty corpus");
  HnswIndex index;
  index.config_ = config;
  const auto n = corpus.size();
  index.data_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(corpus.dim()));
  for (std::size_t i = 0; i < n; ++i) {
    index.names_.push_back(corpus[i].name);
    index.data_.row(static_cast<Eigen::Index>(i)) = AsVector(corpus[i].vector).transpose();
  }
  index.links_.resize(n);
  Philox rng(config.seed);
  const double ml = 1.0 / std::log(static_cast<double>(config.max_degree));
  for (std::size_t i = 0; i < n; ++i) {
    const int level = static_cast<int>(std::floor(-std::log(1.0 - rng.Uniform()) * ml));
    index.Insert(static_cast<std::uint32_t>(i), level);
  }
  return index;
}

std::vector<Neighbor> HnswIndex::Search(const Eigen::VectorXd& v, std::size_t k,
                                        std::string_view exclude) const {
  if (static_cast<std::size_t>(v.size()) != dim()) {
    throw DimensionError("query dimension " + std::to_string(v.size()) +
                         " differs from index dimension " + std::to_string(dim()));
  }
  std::int64_t excluded = -1;
  if (!exclude.empty()) {
    const auto it = std::find(names_.begin(), names_.end(), exclude);
    if (it != names_.end()) excluded = it - names_.begin();
  }
  std::vector<Candidate> found;
  if (names_.size() <= k + 1) {
    // Exhaustive regime.
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (static_cast<std::int64_t>(i) == excluded) continue;
      found.emplace_back(Dist(v, static_cast<std::uint32_t>(i)), static_cast<std::uint32_t>(i));
    }
  } else {
    const auto entry_node = static_cast<std::uint32_t>(entry_);
    std::vector<Candidate> ep{{Dist(v, entry_node), entry_node}};
    for (int l = max_level_; l > 0; --l) ep = SearchLayer(v, ep, 1, l, -1);
    found = SearchLayer(v, ep, std::max(config_.ef_search, k), 0, excluded);
  }
  std::vector<Neighbor> out;
  for (const auto& [d, id] : found) out.push_back({names_[id], d});
  std::sort(out.begin(), out.end(), NeighborLess);
  if (out.size() > k) out.resize(k);
  return out;
}

RetrievalResult HnswIndex::Query(const DescriptorSet& queries, std::size_t k) const {
  if (k >= size()) {
    throw ValidationError("k = " + std::to_string(k) + " must be below the corpus size " +
                          std::to_string(size()));
  }
  if (!queries.empty() && queries.dim() != dim()) {
    throw DimensionError("query dimension " + std::to_string(queries.dim()) +
                         " differs from index dimension " + std::to_string(dim()));
  }
  RetrievalResult result;
  for (const auto& q : queries.entries()) {
    result.queries.push_back({q.name, Search(AsVector(q.vector), k, q.name)});
  }
  return result;
}

namespace {
constexpr std::string_view kIndexMagic = "HNSW";
constexpr std::uint32_t kIndexVersion = 1;
}  // namespace

std::string HnswIndex::Serialize() const {
  std::string out(kIndexMagic);
  binary::PutU32(&out, kIndexVersion);
  binary::PutU64(&out, config_.max_degree);
  binary::PutU64(&out, config_.ef_construction);
  binary::PutU64(&out, config_.ef_search);
  binary::PutU64(&out, config_.seed);
  binary::PutU64(&out, names_.size());
  binary::PutU64(&out, dim());
  binary::PutU64(&out, static_cast<std::uint64_t>(entry_));
  binary::PutU32(&out, static_cast<std::uint32_t>(max_level_));
  for (std::size_t i = 0; i < names_.size(); ++i) {
    binary::PutU32(&out, static_cast<std::uint32_t>(names_[i].size()));
    out += names_[i];
    for (Eigen::Index j = 0; j < data_.cols(); ++j) {
      binary::PutF64(&out, data_(static_cast<Eigen::Index>(i), j));
    }
    binary::PutU32(&out, static_cast<std::uint32_t>(links_[i].size()));
    for (const auto& level : links_[i]) {
      binary::PutU32(&out, static_cast<std::uint32_t>(level.size()));
      for (std::uint32_t nb : level) binary::PutU32(&out, nb);
    }
  }
  return out;
}

HnswIndex HnswIndex::Parse(std::string_view bytes) {
  binary::Reader r(bytes, "index");
  if (bytes.size() < kIndexMagic.size() || r.Take(kIndexMagic.size()) != kIndexMagic) {
    throw FormatError(FormatError::Kind::kMagic, "index: bad magic number (expected 'HNSW')");
  }
  const std::uint32_t version = r.U32();
  if (version != kIndexVersion) {
    throw FormatError(FormatError::Kind::kVersion,
                      "index: unsupported version " + std::to_string(version));
  }
  HnswIndex index;
  index.config_.max_degree = r.U64();
  index.config_.ef_construction = r.U64();
  index.config_.ef_search = r.U64();
  index.config_.seed = r.U64();
  const std::uint64_t n = r.U64();
  const std::uint64_t dim = r.U64();
  index.entry_ = static_cast<std::int64_t>(r.U64());
  index.max_level_ = static_cast<int>(r.U32());
  if (n == 0 || dim == 0 || n > bytes.size() || dim > bytes.size()) {
    throw FormatError(FormatError::Kind::kDimension, "index: bad corpus shape");
  }
  if (index.entry_ < 0 || static_cast<std::uint64_t>(index.entry_) >= n || index.max_level_ < 0) {
    throw FormatError(FormatError::Kind::kValue, "index: bad entry point");
  }
  index.data_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  index.links_.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    index.names_.emplace_back(r.Take(r.U32()));
    for (std::uint64_t j = 0; j < dim; ++j) {
      const double x = r.F64();
      if (!std::isfinite(x)) throw FormatError(FormatError::Kind::kValue, "index: non-finite value");
      index.data_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x;
    }
    const std::uint32_t levels = r.U32();
    if (levels == 0 || levels > static_cast<std::uint32_t>(index.max_level_) + 1) {
      throw FormatError(FormatError::Kind::kValue, "index: bad level count");
    }
    index.links_[i].resize(levels);
    for (auto& level : index.links_[i]) {
      const std::uint32_t count = r.U32();
      if (count > n) throw FormatError(FormatError::Kind::kValue, "index: bad degree");
      for (std::uint32_t c = 0; c < count; ++c) {
        const std::uint32_t nb = r.U32();
        if (nb >= n) throw FormatError(FormatError::Kind::kValue, "index: link out of range");
        level.push_back(nb);
      }
    }
  }
  if (r.remaining() != 0) throw FormatError(FormatError::Kind::kDimension, "index: trailing bytes");
  index.config_.Validate();
  return index;
}

void WriteIndexFile(const std::string& path, const HnswIndex& index) {
  text::WriteFile(path, index.Serialize());
}

HnswIndex ReadIndexFile(const std::string& path) { return HnswIndex::Parse(text::ReadFile(path)); }

double RecallAtK(const RetrievalResult& approx, const RetrievalResult& exact) {
  std::unordered_map<std::string, const QueryResult*> by_query;
  for (const auto& q : approx.queries) by_query[q.query] = &q;
  std::size_t hit = 0, total = 0;
  for (const auto& q : exact.queries) {
    total += q.neighbors.size();
    const auto it = by_query.find(q.query);
    if (it == by_query.end()) continue;
    for (const auto& e : q.neighbors) {
      for (const auto& a : it->second->neighbors) {
        if (a.name == e.name) {
          ++hit;
          break;
        }
      }
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
}

// ---------------------------------------------------------------------------
// Pairs, ground truth, accuracy

std::string WritePairs(const RetrievalResult& result) {
  std::ostringstream out;
  out << "# <query> <candidate> <rank> <distance>\n";
  for (const auto& q : result.queries) {
    for (std::size_t i = 0; i < q.neighbors.size(); ++i) {
      out << q.query << ' ' << q.neighbors[i].name << ' ' << i + 1 << ' '
          << text::FormatReal(q.neighbors[i].distance) << '\n';
    }
  }
  return out.str();
}

RetrievalResult ParsePairs(std::string_view content) {
  RetrievalResult result;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& line : text::SplitLines(content)) {
    line.Expect(4, "<query> <candidate> <rank> <distance>");
    if (line.tokens.size() > 4) line.Fail(4, "unexpected trailing field");
    const std::string query = line.Str(0);
    const std::uint32_t rank = line.U32(2);
    if (rank == 0) line.Fail(2, "rank starts at 1");
    const double distance = line.Real(3);
    if (distance < 0) line.Fail(3, "negative distance");
    auto [it, fresh] = slot.emplace(query, result.queries.size());
    if (fresh) result.queries.push_back({query, {}});
    result.queries[it->second].neighbors.push_back({line.Str(1), distance});
  }
  return result;
}

GroundTruth GroundTruth::FromMatches(const MatchSet& matches, const ImageNames& names,
                                     std::size_t inlier_threshold) {
  GroundTruth truth;
  for (const auto& m : matches.pairs) {
    if (m.num_inliers() > inlier_threshold) {
      truth.Add(names.Name(m.pair.first), names.Name(m.pair.second));
    }
  }
  return truth;
}

void GroundTruth::Add(const std::string& a, const std::string& b) {
  pairs_.insert(std::minmax(a, b));
}

bool GroundTruth::Contains(const std::string& a, const std::string& b) const {
  return pairs_.count(std::minmax(a, b)) > 0;
}

std::string AccuracyReport::Format() const {
  std::string a = text::FormatReal(accuracy);
  if (a.find_first_of(".e") == std::string::npos) a += ".0";
  return "accuracy=" + a + " pairs=" + std::to_string(pairs) + " correct=" +
         std::to_string(correct);
}

AccuracyReport RetrievalAccuracy(const RetrievalResult& result, const GroundTruth& truth) {
  std::set<std::pair<std::string, std::string>> retrieved;
  for (const auto& q : result.queries) {
    for (const auto& n : q.neighbors) {
      if (n.name != q.query) retrieved.insert(std::minmax(q.query, n.name));
    }
  }
  AccuracyReport report;
  report.pairs = retrieved.size();
  for (const auto& [a, b] : retrieved) report.correct += truth.Contains(a, b);
  report.accuracy =
      report.pairs ? static_cast<double>(report.correct) / static_cast<double>(report.pairs) : 0.0;
  return report;
}

// ---------------------------------------------------------------------------
// Timing

std::string TimingReport::Format() const {
  std::ostringstream out;
  out << "t_fe=" << t_feature_extraction << " t_nns=" << t_nn_search << " total=" << total()
      << " cpu_fe=" << cpu_feature_extraction << " cpu_nns=" << cpu_nn_search;
  return out.str();
}

namespace {

class Stopwatch {
 public:
  Stopwatch() : wall_(std::chrono::steady_clock::now()), cpu_(std::clock()) {}
  double Wall() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_).count();
  }
  double Cpu() const { return static_cast<double>(std::clock() - cpu_) / CLOCKS_PER_SEC; }

 private:
  std::chrono::steady_clock::time_point wall_;
  std::clock_t cpu_;
};

void SearchStage(PipelineResult* out, const HnswConfig& config, std::size_t k) {
  if (out->descriptors.size() < 2) throw ValidationError("retrieval needs at least 2 images");
  const Stopwatch watch;
  const HnswIndex index = HnswIndex::Build(out->descriptors, config);
  out->result = index.Query(out->descriptors, std::min(k, out->descriptors.size() - 1));
  out->timing.t_nn_search = watch.Wall();
  out->timing.cpu_nn_search = watch.Cpu();
}

}  // namespace

PipelineResult TimedPipeline(const std::vector<std::pair<std::string, FeatureMap>>& maps,
                             const Head& head, const HnswConfig& config, std::size_t k) {
  PipelineResult out;
  const Stopwatch watch;
  out.descriptors = DescriptorSet(head.output_dim());
  for (const auto& [name, map] : maps) {
    const Eigen::VectorXd v = head.Forward(map);
    out.descriptors.Add(name, std::vector<double>(v.data(), v.data() + v.size()));
  }
  out.timing.t_feature_extraction = watch.Wall();
  out.timing.cpu_feature_extraction = watch.Cpu();
  SearchStage(&out, config, k);
  return out;
}

PipelineResult TimedPipeline(const DescriptorSet& descriptors, const HnswConfig& config,
                             std::size_t k) {
  PipelineResult out;
  out.descriptors = descriptors;
  SearchStage(&out, config, k);
  return out;
}

}  // namespace pairforge
