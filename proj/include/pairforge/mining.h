#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pairforge/annotate.h"
#include "pairforge/embedding.h"
#include "pairforge/random.h"

namespace pairforge {

struct BatchQuery {
  ImageId query;
  PositiveList positives;  // GS descending, ties by ascending id
  // Only filled by global hard-negative mining; batched mining derives
  // negatives structurally from the other queries.
  std::vector<ImageId> hard_negatives;
  friend bool operator==(const BatchQuery&, const BatchQuery&) = default;
};

struct TrainingBatch {
  std::vector<BatchQuery> queries;

  // Union of the positives of every other query, in batch order.
  std::vector<ImageId> NegativesOf(std::size_t query_index) const;
  // Queries, positives and hard negatives, deduplicated, in batch order.
  std::vector<ImageId> Members() const;
  std::size_t num_samples() const;
  friend bool operator==(const TrainingBatch&, const TrainingBatch&) = default;
};

struct MiningConfig {
  std::size_t queries_per_batch = 5;     // B
  std::size_t positives_per_query = 3;   // M
  std::size_t batches = 2000;            // T
  std::uint32_t epsilon = kDefaultEpsilon;
  std::uint64_t seed = 0;

  void Validate() const;
};

// Streams batches: B distinct scenes drawn uniformly, one eligible query per
// scene (an image with at least M positives above epsilon), M positives drawn
// without replacement and re-sorted by GS.
class BatchedMiner {
 public:
  BatchedMiner(const PositiveLists& lists, const MiningConfig& config);

  TrainingBatch Next();
  std::size_t num_eligible_scenes() const { return scenes_.size(); }

  const Philox::State& rng_state() const { return rng_.state(); }
  void set_rng_state(const Philox::State& state) { rng_ = Philox(state); }

 private:
  struct SceneQueries {
    SceneId scene;
    std::vector<ImageId> queries;
  };

  MiningConfig config_;
  std::map<ImageId, PositiveList> filtered_;
  std::vector<SceneQueries> scenes_;
  Philox rng_;
};

std::vector<TrainingBatch> MineBatched(const PositiveLists& lists, const MiningConfig& config);

// The k images outside the query's scene closest to it in descriptor space,
// ties by ascending id.
std::vector<ImageId> MineGlobalHardNegatives(ImageId query, const Embeddings& descriptors,
                                             const std::map<ImageId, SceneId>& scene_of,
                                             std::size_t k);

// Candidate with the smallest descriptor distance to the query, ties by
// ascending id.
ImageId SelectNearestPositive(ImageId query, const std::vector<ImageId>& candidates,
                              const Embeddings& descriptors);

enum class MiningStrategy { kBatched, kGlobalHard };

MiningStrategy ParseMiningStrategy(std::string_view name);
std::string_view MiningStrategyName(MiningStrategy strategy);

// Descriptor extractions a strategy spends over a training run: global hard
// mining re-extracts the whole dataset once per epoch, batched mining never.
std::uint64_t CountDescriptorExtractions(MiningStrategy strategy, std::uint64_t dataset_size,
                                         std::uint64_t epochs);

// Batches with explicit hard negatives: queries and positives drawn exactly as
// in batched mining, negatives from MineGlobalHardNegatives.
class GlobalHardMiner {
 public:
  GlobalHardMiner(const PositiveLists& lists, const MiningConfig& config,
                  std::size_t negatives_per_query);

  TrainingBatch Next(const Embeddings& descriptors);

  const Philox::State& rng_state() const { return base_.rng_state(); }
  void set_rng_state(const Philox::State& state) { base_.set_rng_state(state); }

 private:
  BatchedMiner base_;
  std::map<ImageId, SceneId> scene_of_;
  std::size_t negatives_per_query_;
};

// BATCH / QUERY <id> / POS <id> <gs> / NEG <id> line groups.
std::string WriteBatches(const std::vector<TrainingBatch>& batches);
std::vector<TrainingBatch> ParseBatches(std::string_view content);

}  // namespace pairforge
