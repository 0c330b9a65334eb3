#include "pairforge/trainer.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "pairforge/errors.h"
#include "pairforge/io.h"
#include "pairforge/text.h"

namespace pairforge {

void TrainConfig::Validate() const {
  if (!(initial_lr > 0)) throw ValidationError("initial learning rate must be positive");
  if (!(lr_decay_rate >= 0)) throw ValidationError("learning-rate decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ValidationError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0)) throw ValidationError("Adam epsilon must be positive");
  if (!(weight_decay >= 0)) throw ValidationError("weight decay must be >= 0");
  if (epochs < 1 || iterations_per_epoch < 1) {
    throw ValidationError("epochs and iterations per epoch must be >= 1");
  }
  if (strategy == MiningStrategy::kGlobalHard && hard_negatives < 1) {
    throw ValidationError("global hard mining needs at least one negative per query");
  }
  loss_config.Validate();
}

double TrainConfig::LearningRate(std::size_t epoch) const {
  return initial_lr * std::exp(-lr_decay_rate * static_cast<double>(epoch));
}

std::string MetricRecord::Format() const {
  std::ostringstream out;
  out << step << ' ' << epoch << ' ' << text::FormatReal(lr) << ' ' << text::FormatReal(loss)
      << ' ' << active_terms;
  return out.str();
}

TrainInputs InputsFromDescriptors(const DescriptorSet& set, const ImageNames& names) {
  TrainInputs inputs;
  for (const auto& e : set.entries()) {
    inputs.emplace(names.Id(e.name), FeatureMap(e.vector.size(), 1, 1, e.vector));
  }
  return inputs;
}

std::vector<std::pair<std::string, FeatureMap>> LoadNamedMaps(const std::string& path) {
  namespace fs = std::filesystem;
  std::vector<std::pair<std::string, FeatureMap>> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.path().extension() == ".fmap") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      out.emplace_back(file.stem().string(), ReadFeatureMapFile(file.string()));
    }
    if (out.empty()) throw ValidationError("no .fmap files in " + path);
    return out;
  }
  const DescriptorSet set = ReadDescriptorFile(path);
  for (const auto& e : set.entries()) {
    out.emplace_back(e.name, FeatureMap(e.vector.size(), 1, 1, e.vector));
  }
  return out;
}

TrainInputs LoadInputs(const std::string& path, const ImageNames& names) {
  TrainInputs inputs;
  for (auto& [name, map] : LoadNamedMaps(path)) inputs.emplace(names.Id(name), std::move(map));
  return inputs;
}

Trainer::Trainer(std::unique_ptr<Head> head, const TrainConfig& config, const TrainInputs* inputs)
    : head_(std::move(head)), config_(config), inputs_(inputs) {
  config_.Validate();
  if (!head_) throw ValidationError("trainer needs a head");
  if (!inputs_ || inputs_->empty()) throw ValidationError("trainer needs inputs");
  state_.spec = head_->spec();
  state_.params = head_->params();
  state_.moment1 = Eigen::VectorXd::Zero(state_.params.size());
  state_.moment2 = Eigen::VectorXd::Zero(state_.params.size());
}

void Trainer::UseBatches(std::vector<TrainingBatch> batches) {
  if (batches.empty()) throw ValidationError("no training batches");
  if (config_.strategy == MiningStrategy::kGlobalHard) {
    throw ValidationError("global hard mining draws its own batches; pass positive lists");
  }
  fixed_ = std::move(batches);
  miner_.reset();
}

void Trainer::UseMiner(const PositiveLists& lists, const MiningConfig& mining) {
  fixed_.clear();
  if (config_.strategy == MiningStrategy::kGlobalHard) {
    hard_miner_ = std::make_unique<GlobalHardMiner>(lists, mining, config_.hard_negatives);
    state_.rng = hard_miner_->rng_state();
  } else {
    miner_ = std::make_unique<BatchedMiner>(lists, mining);
    state_.rng = miner_->rng_state();
  }
}

Embeddings Trainer::Embed() const {
  Embeddings out;
  for (const auto& [id, map] : *inputs_) out.emplace(id, head_->Forward(map));
  return out;
}

void Trainer::RefreshMiningDescriptors(std::uint64_t epoch) {
  if (state_.mining_epoch == static_cast<std::int64_t>(epoch)) return;
  state_.mining_descriptors = Embed();
  state_.descriptor_extractions += inputs_->size();
  state_.mining_epoch = static_cast<std::int64_t>(epoch);
}

TrainingBatch Trainer::NextBatch() {
  if (!fixed_.empty()) return fixed_[state_.step % fixed_.size()];
  if (miner_) {
    TrainingBatch b = miner_->Next();
    state_.rng = miner_->rng_state();
    return b;
  }
  if (hard_miner_) {
    RefreshMiningDescriptors(state_.step / config_.iterations_per_epoch);
    TrainingBatch b = hard_miner_->Next(state_.mining_descriptors);
    state_.rng = hard_miner_->rng_state();
    return b;
  }
  throw ValidationError("trainer has no batch source");
}

MetricRecord Trainer::Step() {
  const std::uint64_t step = state_.step;
  const std::uint64_t epoch = step / config_.iterations_per_epoch;
  const TrainingBatch batch = NextBatch();

  Embeddings embeddings;
  std::map<ImageId, std::unique_ptr<Head::Cache>> caches;
  for (ImageId id : batch.Members()) {
    const auto it = inputs_->find(id);
    if (it == inputs_->end()) {
      throw ValidationError("batch member " + std::to_string(id.value) + " has no input");
    }
    std::unique_ptr<Head::Cache> cache;
    try {
      embeddings.emplace(id, head_->Forward(it->second, &cache));
    } catch (const NormalizationError& e) {
      // A valid input that the head maps to zero or overflow means the parameters blew up.
      const auto& v = it->second.values();
      const bool valid = std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }) &&
                         std::any_of(v.begin(), v.end(), [](double x) { return x != 0; });
      if (valid) throw DivergenceError(step, e.what());
      throw;
    }
    caches.emplace(id, std::move(cache));
  }
  const BatchLossReport loss = BatchLoss(config_.loss, batch, embeddings, config_.loss_config);
  if (!std::isfinite(loss.value)) throw DivergenceError(step, "non-finite loss");

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(head_->params().size());
  for (const auto& [id, g] : loss.grads) {
    head_->Backward(inputs_->at(id), *caches.at(id), g, &grad);
  }
  if (!grad.allFinite()) throw DivergenceError(step, "non-finite gradient");

  // Adam with decoupled weight decay.
  const double lr = config_.LearningRate(epoch);
  const double t = static_cast<double>(step + 1);
  state_.moment1 = config_.beta1 * state_.moment1 + (1 - config_.beta1) * grad;
  state_.moment2 = config_.beta2 * state_.moment2 + (1 - config_.beta2) * grad.cwiseAbs2();
  const double c1 = 1 - std::pow(config_.beta1, t);
  const double c2 = 1 - std::pow(config_.beta2, t);
  Eigen::VectorXd& p = head_->params();
  const Eigen::VectorXd adaptive =
      (state_.moment1 / c1).array() / ((state_.moment2 / c2).array().sqrt() + config_.adam_epsilon);
  p -= lr * (adaptive + config_.weight_decay * p);
  head_->Project();
  if (!p.allFinite()) throw DivergenceError(step, "non-finite parameters");

  state_.params = p;
  state_.loss_history.push_back(loss.value);
  state_.step = step + 1;
  return {step, epoch, lr, loss.value, loss.active_terms};
}

std::vector<MetricRecord> Trainer::Run(std::size_t steps) {
  std::vector<MetricRecord> out;
  for (std::size_t i = 0; i < steps && !done(); ++i) out.push_back(Step());
  return out;
}

std::vector<MetricRecord> Trainer::RunToEnd() {
  return Run(config_.total_steps() - std::min<std::uint64_t>(state_.step, config_.total_steps()));
}

void Trainer::Restore(const TrainState& state) {
  if (!(state.spec == head_->spec())) {
    throw CheckpointError("checkpoint head '" + state.spec.Format() + "' does not match '" +
                          head_->spec().Format() + "'");
  }
  const auto n = head_->params().size();
  if (state.params.size() != n || state.moment1.size() != n || state.moment2.size() != n) {
    throw CheckpointError("checkpoint parameter count does not match the head");
  }
  if (state.loss_history.size() != state.step) {
    throw CheckpointError("checkpoint loss history length disagrees with its step");
  }
  state_ = state;
  head_->params() = state.params;
  if (miner_) miner_->set_rng_state(state.rng);
  if (hard_miner_) hard_miner_->set_rng_state(state.rng);
}

// ---------------------------------------------------------------------------
// Checkpoint file: "PFCK", version, head line, step, params, moments, rng,
// loss history, mining snapshot, then an FNV-1a checksum of everything before.

namespace {

constexpr std::string_view kCheckpointMagic = "PFCK";
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t Fnv1a(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void PutVector(std::string* out, const Eigen::VectorXd& v) {
  binary::PutU64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) binary::PutF64(out, v[i]);
}

Eigen::VectorXd TakeVector(binary::Reader* r) {
  const std::uint64_t n = r->U64();
  if (n > r->remaining() / 8) throw CheckpointError("checkpoint vector length exceeds file");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = r->F64();
  return v;
}

}  // namespace

std::string SerializeCheckpoint(const TrainState& state) {
  std::string out(kCheckpointMagic);
  binary::PutU32(&out, kCheckpointVersion);
  const std::string head = state.spec.Format();
  binary::PutU32(&out, static_cast<std::uint32_t>(head.size()));
  out += head;
  binary::PutU64(&out, state.step);
  PutVector(&out, state.params);
  PutVector(&out, state.moment1);
  PutVector(&out, state.moment2);
  binary::PutU64(&out, state.rng.seed);
  binary::PutU64(&out, state.rng.counter);
  binary::PutU32(&out, state.rng.lane);
  binary::PutU64(&out, state.loss_history.size());
  for (double l : state.loss_history) binary::PutF64(&out, l);
  binary::PutU64(&out, state.descriptor_extractions);
  binary::PutU64(&out, static_cast<std::uint64_t>(state.mining_epoch));
  binary::PutU64(&out, state.mining_descriptors.size());
  for (const auto& [id, v] : state.mining_descriptors) {
    binary::PutU32(&out, id.value);
    PutVector(&out, v);
  }
  binary::PutU64(&out, Fnv1a(out));
  return out;
}

TrainState ParseCheckpoint(std::string_view bytes) {
  try {
    if (bytes.size() < kCheckpointMagic.size() + 8 ||
        bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
      throw CheckpointError("not a checkpoint (bad magic number)");
    }
    const auto body = bytes.substr(0, bytes.size() - 8);
    binary::Reader tail(bytes.substr(bytes.size() - 8), "checkpoint");
    if (tail.U64() != Fnv1a(body)) throw CheckpointError("checkpoint checksum mismatch");

    binary::Reader r(body, "checkpoint");
    r.Take(kCheckpointMagic.size());
    const std::uint32_t version = r.U32();
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    TrainState s;
    const std::uint32_t head_len = r.U32();
    s.spec = HeadSpec::Parse(r.Take(head_len));
    s.step = r.U64();
    s.params = TakeVector(&r);
    s.moment1 = TakeVector(&r);
    s.moment2 = TakeVector(&r);
    s.rng.seed = r.U64();
    s.rng.counter = r.U64();
    s.rng.lane = r.U32();
    if (s.rng.lane > 4) throw CheckpointError("checkpoint rng lane out of range");
    const std::uint64_t history = r.U64();
    if (history > r.remaining() / 8) throw CheckpointError("checkpoint history exceeds file");
    s.loss_history.resize(history);
    for (double& l : s.loss_history) l = r.F64();
    s.descriptor_extractions = r.U64();
    s.mining_epoch = static_cast<std::int64_t>(r.U64());
    const std::uint64_t snapshot = r.U64();
    for (std::uint64_t i = 0; i < snapshot; ++i) {
      const ImageId id(r.U32());
      s.mining_descriptors.emplace(id, TakeVector(&r));
    }
    if (r.remaining() != 0) throw CheckpointError("trailing bytes in checkpoint");
    if (s.moment1.size() != s.params.size() || s.moment2.size() != s.params.size()) {
      throw CheckpointError("checkpoint moment shapes do not match the parameters");
    }
    return s;
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void WriteCheckpointFile(const std::string& path, const TrainState& state) {
  text::WriteFile(path, SerializeCheckpoint(state));
}

TrainState ReadCheckpointFile(const std::string& path) {
  return ParseCheckpoint(text::ReadFile(path));
}

}  // namespace pairforge
