#include "pairforge/mining.h"

#include <algorithm>
#include <limits>
#include <set>
#include <sstream>

#include "pairforge/errors.h"
#include "pairforge/text.h"

namespace pairforge {

std::vector<ImageId> TrainingBatch::NegativesOf(std::size_t query_index) const {
  std::vector<ImageId> out;
  for (std::size_t j = 0; j < queries.size(); ++j) {
    if (j == query_index) continue;
    for (const auto& p : queries[j].positives) out.push_back(p.image);
  }
  return out;
}

std::vector<ImageId> TrainingBatch::Members() const {
  std::vector<ImageId> out;
  std::set<ImageId> seen;
  auto add = [&](ImageId id) {
    if (seen.insert(id).second) out.push_back(id);
  };
  for (const auto& q : queries) {
    add(q.query);
    for (const auto& p : q.positives) add(p.image);
    for (ImageId n : q.hard_negatives) add(n);
  }
  return out;
}

std::size_t TrainingBatch::num_samples() const {
  std::size_t n = 0;
  for (const auto& q : queries) n += 1 + q.positives.size();
  return n;
}

void MiningConfig::Validate() const {
  if (queries_per_batch < 2) {
    throw ValidationError("a batch needs at least 2 queries for cross-query negatives");
  }
  if (positives_per_query < 1) throw ValidationError("positives per query must be >= 1");
  if (batches < 1) throw ValidationError("batch count must be >= 1");
}

BatchedMiner::BatchedMiner(const PositiveLists& lists, const MiningConfig& config)
    : config_(config), rng_(config.seed) {
  config_.Validate();
  std::map<SceneId, std::vector<ImageId>> by_scene;
  for (const auto& [query, list] : lists.lists) {
    const auto scene_it = lists.scene_of.find(query);
    if (scene_it == lists.scene_of.end()) {
      throw MiningError("positive lists carry no scene for image " +
                        std::to_string(query.value));
    }
    PositiveList kept;
    for (const auto& e : list) {
      if (e.gs <= config_.epsilon || e.image == query) continue;
      const auto pos_scene = lists.scene_of.find(e.image);
      if (pos_scene != lists.scene_of.end() && pos_scene->second != scene_it->second) continue;
      kept.push_back(e);
    }
    if (kept.size() >= config_.positives_per_query) {
      by_scene[scene_it->second].push_back(query);
      filtered_.emplace(query, std::move(kept));
    }
  }
  for (auto& [scene, queries] : by_scene) scenes_.push_back({scene, std::move(queries)});
  if (scenes_.size() < config_.queries_per_batch) {
    throw MiningError("batched mining needs " + std::to_string(config_.queries_per_batch) +
                      " scenes with an eligible query (>= " +
                      std::to_string(config_.positives_per_query) + " positives with GS > " +
                      std::to_string(config_.epsilon) + "), found " +
                      std::to_string(scenes_.size()) + " (short by " +
                      std::to_string(config_.queries_per_batch - scenes_.size()) + ")");
  }
}

TrainingBatch BatchedMiner::Next() {
  TrainingBatch batch;
  for (std::size_t s : rng_.SampleWithoutReplacement(scenes_.size(), config_.queries_per_batch)) {
    const auto& candidates = scenes_[s].queries;
    BatchQuery q;
    q.query = candidates[rng_.UniformInt(candidates.size())];
    const auto& list = filtered_.at(q.query);
    for (std::size_t i : rng_.SampleWithoutReplacement(list.size(), config_.positives_per_query)) {
      q.positives.push_back(list[i]);
    }
    std::sort(q.positives.begin(), q.positives.end(),
              [](const PositiveEntry& a, const PositiveEntry& b) {
                return a.gs != b.gs ? a.gs > b.gs : a.image < b.image;
              });
    batch.queries.push_back(std::move(q));
  }
  return batch;
}

std::vector<TrainingBatch> MineBatched(const PositiveLists& lists, const MiningConfig& config) {
  BatchedMiner miner(lists, config);
  std::vector<TrainingBatch> out;
  out.reserve(config.batches);
  for (std::size_t t = 0; t < config.batches; ++t) out.push_back(miner.Next());
  return out;
}

namespace {

const Eigen::VectorXd& DescriptorOf(const Embeddings& descriptors, ImageId id) {
  const auto it = descriptors.find(id);
  if (it == descriptors.end()) {
    throw MiningError("no descriptor for image " + std::to_string(id.value));
  }
  return it->second;
}

}  // namespace

std::vector<ImageId> MineGlobalHardNegatives(ImageId query, const Embeddings& descriptors,
                                             const std::map<ImageId, SceneId>& scene_of,
                                             std::size_t k) {
  if (k == 0) throw ValidationError("hard negative count must be >= 1");
  const auto& fq = DescriptorOf(descriptors, query);
  const auto scene_it = scene_of.find(query);
  if (scene_it == scene_of.end()) {
    throw MiningError("no scene for image " + std::to_string(query.value));
  }
  std::vector<std::pair<double, ImageId>> candidates;
  for (const auto& [id, scene] : scene_of) {
    if (scene == scene_it->second) continue;
    const auto& f = DescriptorOf(descriptors, id);
    if (f.size() != fq.size()) throw DimensionError("descriptor dimension mismatch");
    candidates.emplace_back((f - fq).norm(), id);
  }
  if (candidates.empty()) {
    throw MiningError("no image outside the scene of query " + std::to_string(query.value));
  }
  const std::size_t n = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n),
                    candidates.end());
  std::vector<ImageId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(candidates[i].second);
  return out;
}

ImageId SelectNearestPositive(ImageId query, const std::vector<ImageId>& candidates,
                              const Embeddings& descriptors) {
  if (candidates.empty()) throw MiningError("no positive candidates");
  const auto& fq = DescriptorOf(descriptors, query);
  std::pair<double, ImageId> best{std::numeric_limits<double>::infinity(), ImageId()};
  for (ImageId c : candidates) {
    const auto& f = DescriptorOf(descriptors, c);
    if (f.size() != fq.size()) throw DimensionError("descriptor dimension mismatch");
    best = std::min(best, std::make_pair((f - fq).norm(), c));
  }
  return best.second;
}

MiningStrategy ParseMiningStrategy(std::string_view name) {
  if (name == "batched") return MiningStrategy::kBatched;
  if (name == "global-hard") return MiningStrategy::kGlobalHard;
  throw ValidationError("unknown mining strategy '" + std::string(name) + "'");
}

std::string_view MiningStrategyName(MiningStrategy strategy) {
  return strategy == MiningStrategy::kBatched ? "batched" : "global-hard";
}

std::uint64_t CountDescriptorExtractions(MiningStrategy strategy, std::uint64_t dataset_size,
                                         std::uint64_t epochs) {
  return strategy == MiningStrategy::kGlobalHard ? dataset_size * epochs : 0;
}

GlobalHardMiner::GlobalHardMiner(const PositiveLists& lists, const MiningConfig& config,
                                 std::size_t negatives_per_query)
    : base_(lists, config), scene_of_(lists.scene_of), negatives_per_query_(negatives_per_query) {
  if (negatives_per_query_ == 0) throw ValidationError("hard negative count must be >= 1");
}

TrainingBatch GlobalHardMiner::Next(const Embeddings& descriptors) {
  TrainingBatch batch = base_.Next();
  for (auto& q : batch.queries) {
    q.hard_negatives =
        MineGlobalHardNegatives(q.query, descriptors, scene_of_, negatives_per_query_);
  }
  return batch;
}

std::string WriteBatches(const std::vector<TrainingBatch>& batches) {
  std::ostringstream out;
  out << "# BATCH, then per query: QUERY <id>, POS <id> <gs> lines, NEG <id> lines\n";
  for (const auto& batch : batches) {
    out << "BATCH\n";
    for (const auto& q : batch.queries) {
      out << "QUERY " << q.query << '\n';
      for (const auto& p : q.positives) out << "POS " << p.image << ' ' << p.gs << '\n';
      for (ImageId n : q.hard_negatives) out << "NEG " << n << '\n';
    }
  }
  return out.str();
}

std::vector<TrainingBatch> ParseBatches(std::string_view content) {
  std::vector<TrainingBatch> batches;
  for (const auto& line : text::SplitLines(content)) {
    const auto keyword = line.tokens[0].text;
    if (keyword == "BATCH") {
      if (line.tokens.size() > 1) line.Fail(1, "unexpected trailing field");
      batches.emplace_back();
    } else if (keyword == "QUERY") {
      if (batches.empty()) line.Fail(0, "QUERY before any BATCH");
      line.Expect(2, "QUERY <id>");
      batches.back().queries.push_back({ImageId(line.U32(1)), {}, {}});
    } else if (keyword == "POS" || keyword == "NEG") {
      if (batches.empty() || batches.back().queries.empty()) {
        line.Fail(0, std::string(keyword) + " before any QUERY");
      }
      auto& q = batches.back().queries.back();
      if (keyword == "POS") {
        line.Expect(3, "POS <id> <gs>");
        q.positives.push_back({ImageId(line.U32(1)), line.U32(2)});
      } else {
        line.Expect(2, "NEG <id>");
        q.hard_negatives.push_back(ImageId(line.U32(1)));
      }
    } else {
      line.Fail(0, "unknown record '" + std::string(keyword) + "'");
    }
  }
  return batches;
}

}  // namespace pairforge
