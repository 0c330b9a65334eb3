#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pairforge/embedding.h"
#include "pairforge/head.h"
#include "pairforge/losses.h"
#include "pairforge/mining.h"
#include "pairforge/random.h"

namespace pairforge {

struct TrainConfig {
  double initial_lr = 1e-5;
  double lr_decay_rate = 0.1;  // l_i = l_0 * exp(-rate * i), i the 0-based epoch
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 5e-4;  // decoupled
  std::size_t epochs = 20;
  std::size_t iterations_per_epoch = 2000;
  LossKind loss = LossKind::kRankedList;
  LossConfig loss_config;
  MiningStrategy strategy = MiningStrategy::kBatched;
  std::size_t hard_negatives = 12;  // per query, global-hard only

  void Validate() const;
  double LearningRate(std::size_t epoch) const;
  std::size_t total_steps() const { return epochs * iterations_per_epoch; }
};

struct MetricRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double lr = 0;
  double loss = 0;
  std::size_t active_terms = 0;

  // "step epoch lr loss active_terms"
  std::string Format() const;
};

struct TrainState {
  HeadSpec spec;
  std::uint64_t step = 0;
  Eigen::VectorXd params;
  Eigen::VectorXd moment1;
  Eigen::VectorXd moment2;
  Philox::State rng;
  std::vector<double> loss_history;
  std::uint64_t descriptor_extractions = 0;
  // Descriptors used by global hard mining during the current epoch.
  std::int64_t mining_epoch = -1;
  Embeddings mining_descriptors;
};

// Per-image inputs: feature maps, or base descriptors as D x 1 x 1 maps.
using TrainInputs = std::map<ImageId, FeatureMap>;

// Maps named by file stem from a directory of .fmap files, or the rows of a
// DVEC descriptor file as D x 1 x 1 maps.
std::vector<std::pair<std::string, FeatureMap>> LoadNamedMaps(const std::string& path);

TrainInputs LoadInputs(const std::string& path, const ImageNames& names);
TrainInputs InputsFromDescriptors(const DescriptorSet& set, const ImageNames& names);

class Trainer {
 public:
  Trainer(std::unique_ptr<Head> head, const TrainConfig& config, const TrainInputs* inputs);

  // Cycles through fixed batches (step t uses batches[t mod n]).
  void UseBatches(std::vector<TrainingBatch> batches);
  // Draws batches from a miner seeded by mining.seed.
  void UseMiner(const PositiveLists& lists, const MiningConfig& mining);

  MetricRecord Step();
  std::vector<MetricRecord> Run(std::size_t steps);
  std::vector<MetricRecord> RunToEnd();

  const Head& head() const { return *head_; }
  const TrainConfig& config() const { return config_; }
  const TrainState& state() const { return state_; }
  bool done() const { return state_.step >= config_.total_steps(); }

  // Throws CheckpointError when the state does not fit this trainer; the
  // trainer is left untouched in that case.
  void Restore(const TrainState& state);

  Embeddings Embed() const;

 private:
  TrainingBatch NextBatch();
  void RefreshMiningDescriptors(std::uint64_t epoch);

  std::unique_ptr<Head> head_;
  TrainConfig config_;
  const TrainInputs* inputs_;
  std::vector<TrainingBatch> fixed_;
  std::unique_ptr<BatchedMiner> miner_;
  std::unique_ptr<GlobalHardMiner> hard_miner_;
  TrainState state_;
};

std::string SerializeCheckpoint(const TrainState& state);
TrainState ParseCheckpoint(std::string_view bytes);
void WriteCheckpointFile(const std::string& path, const TrainState& state);
TrainState ReadCheckpointFile(const std::string& path);

}  // namespace pairforge
