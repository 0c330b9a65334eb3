#include "pairforge/cli.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "pairforge/annotate.h"
#include "pairforge/errors.h"
#include "pairforge/head.h"
#include "pairforge/io.h"
#include "pairforge/mining.h"
#include "pairforge/retrieval.h"
#include "pairforge/synth.h"
#include "pairforge/text.h"
#include "pairforge/trainer.h"
#include "pairforge/viewgraph.h"

namespace pairforge {
namespace {

std::pair<std::size_t, std::size_t> ParseShape(const std::string& s, const char* what) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used_a = 0, used_b = 0;
    const auto a = std::stoul(s.substr(0, x), &used_a);
    const auto b = std::stoul(s.substr(x + 1), &used_b);
    if (used_a != x || used_b != s.size() - x - 1 || a == 0 || b == 0) {
      throw std::invalid_argument(s);
    }
    return {a, b};
  } catch (const std::logic_error&) {
    throw ValidationError(std::string(what) + " must look like RxC with positive counts, got '" +
                          s + "'");
  }
}

ImageNames NamesFrom(const std::string& recon_path) {
  return recon_path.empty() ? ImageNames() : ImageNames(ReadReconstructionFile(recon_path));
}

struct SynthArgs {
  SynthConfig cfg;
  std::string grid = "4x4";
  std::string map_size = "4x6";
  std::string out;
};

struct AnnotateArgs {
  std::string recon, out;
  std::uint32_t epsilon = kDefaultEpsilon;
};

struct GraphArgs {
  std::string recon, matches, out;
  double rew = kDefaultEdgeRatio;
};

struct PartitionArgs {
  std::string graph, out;
  std::size_t max_size = kDefaultMaxClusterSize;
};

struct MineArgs {
  std::string poslists, strategy = "batched", out, desc, recon;
  MiningConfig cfg;
  std::size_t negatives = 12;
};

struct TrainArgs {
  std::string batches, inputs, head = "linear", loss = "rll", out, recon, init, log, poslists,
      strategy = "batched", resume;
  double alpha = -1;  // negative: head default
  double margin = kDefaultMargin;
  TrainConfig cfg;
  MiningConfig mining;
  std::uint64_t seed = 0;
  std::size_t clusters = kDefaultClusters;
  double sharpness = kDefaultSharpness;
  std::size_t output_dim = 0;
};

struct EmbedArgs {
  std::string maps, head, params, out;
  std::size_t clusters = kDefaultClusters;
  double sharpness = kDefaultSharpness;
  std::uint64_t seed = 0;
};

struct IndexArgs {
  std::string desc, out;
  HnswConfig cfg;
};

struct RetrieveArgs {
  std::string index, desc, out;
  std::size_t k = kDefaultRetrievalNumber;
  std::size_t ef_search = 0;
};

struct EvaluateArgs {
  std::string pairs, matches, recon;
  std::size_t inlier_threshold = kDefaultInlierThreshold;
};

HeadSpec SpecFromFlags(const std::string& head, std::size_t input_dim, std::size_t clusters,
                       double sharpness, std::size_t output_dim) {
  HeadSpec spec;
  spec.kind = ParseAggregationKind(head);
  spec.input_dim = input_dim;
  spec.clusters = clusters;
  spec.sharpness = sharpness;
  spec.output_dim = output_dim;
  return spec;
}

std::vector<FeatureMap> MapsOnly(const std::vector<std::pair<std::string, FeatureMap>>& named) {
  std::vector<FeatureMap> out;
  for (const auto& [name, map] : named) out.push_back(map);
  return out;
}

// A head parameter file, or the head stored in a training checkpoint.
std::unique_ptr<Head> LoadHead(const std::string& path) {
  const std::string bytes = text::ReadFile(path);
  if (bytes.rfind("PFCK", 0) == 0) {
    const TrainState state = ParseCheckpoint(bytes);
    return MakeHead(state.spec, state.params);
  }
  return ParseHeadParams(bytes);
}

int RunSynth(const SynthArgs& a, std::ostream& out) {
  SynthConfig cfg = a.cfg;
  std::tie(cfg.grid_rows, cfg.grid_cols) = ParseShape(a.grid, "--grid");
  std::tie(cfg.map_rows, cfg.map_cols) = ParseShape(a.map_size, "--map-size");
  const SynthOutput s = Generate(cfg);
  WriteSynthOutput(a.out, s);
  out << "images=" << s.recon.images().size() << " points=" << s.recon.points().size()
      << " matched_pairs=" << s.matches.pairs.size() << '\n';
  return kExitOk;
}

int RunAnnotate(const AnnotateArgs& a, const GlobalOptions& g, std::ostream& out) {
  const Reconstruction recon = ReadReconstructionFile(a.recon);
  const CovisibilityTable table = BuildCovisibility(recon, g.deterministic ? 1 : g.threads);
  const PositiveLists lists = BuildPositiveLists(table, recon, a.epsilon);
  text::WriteFile(a.out, WritePositiveLists(lists));
  std::size_t positives = 0;
  for (const auto& [q, list] : lists.lists) positives += list.size();
  const auto summary = Summarize(recon);
  out << "images=" << summary.registered_images << " points=" << summary.points
      << " covisible_pairs=" << table.size() << " positives=" << positives << '\n';
  return kExitOk;
}

int RunGraph(const GraphArgs& a, std::ostream& out) {
  const Reconstruction recon = ReadReconstructionFile(a.recon);
  const MatchSet matches = ReadMatchesFile(a.matches);
  ValidateMatches(matches, recon);
  const ViewGraph graph = BuildViewGraph(matches, recon, a.rew);
  text::WriteFile(a.out, WriteViewGraph(graph));
  out << "vertices=" << graph.vertices.size() << " edges=" << graph.edges.size()
      << " n_maxinlier=" << graph.n_maxinlier << '\n';
  return kExitOk;
}

int RunPartition(const PartitionArgs& a, std::ostream& out) {
  const ViewGraph graph = ParseViewGraph(text::ReadFile(a.graph));
  const Partition partition = NormalizedCut(graph, a.max_size);
  text::WriteFile(a.out, WritePartition(partition));
  out << "clusters=" << partition.num_clusters << '\n';
  return kExitOk;
}

int RunMine(const MineArgs& a, std::ostream& out) {
  const PositiveLists lists = ParsePositiveLists(text::ReadFile(a.poslists));
  std::vector<TrainingBatch> batches;
  if (ParseMiningStrategy(a.strategy) == MiningStrategy::kBatched) {
    batches = MineBatched(lists, a.cfg);
  } else {
    if (a.desc.empty()) throw ValidationError("global-hard mining needs --desc");
    const Embeddings desc = ToEmbeddings(ReadDescriptorFile(a.desc), NamesFrom(a.recon));
    GlobalHardMiner miner(lists, a.cfg, a.negatives);
    for (std::size_t t = 0; t < a.cfg.batches; ++t) batches.push_back(miner.Next(desc));
  }
  text::WriteFile(a.out, WriteBatches(batches));
  out << "batches=" << batches.size() << " samples_per_batch="
      << (batches.empty() ? 0 : batches.front().num_samples()) << '\n';
  return kExitOk;
}

int RunTrain(const TrainArgs& a, const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const ImageNames names = NamesFrom(a.recon);
  const auto named = LoadNamedMaps(a.inputs);
  TrainInputs inputs;
  for (const auto& [name, map] : named) inputs.emplace(names.Id(name), map);

  std::unique_ptr<Head> head;
  if (!a.init.empty()) {
    head = LoadHead(a.init);
  } else {
    const FeatureMap& first = named.front().second;
    const auto kind = ParseAggregationKind(a.head);
    const std::size_t input_dim =
        kind == AggregationKind::kLinear ? first.size() : first.channels();
    head = InitializeHead(SpecFromFlags(a.head, input_dim, a.clusters, a.sharpness, a.output_dim),
                          MapsOnly(named), a.seed);
  }

  TrainConfig cfg = a.cfg;
  cfg.loss = ParseLossKind(a.loss);
  cfg.strategy = ParseMiningStrategy(a.strategy);
  cfg.loss_config.margin = a.margin;
  cfg.loss_config.alpha =
      a.alpha >= 0 ? a.alpha
                   : (head->kind() == AggregationKind::kNetVlad ? kNetVladAlpha : kDefaultAlpha);

  Trainer trainer(std::move(head), cfg, &inputs);
  if (cfg.strategy == MiningStrategy::kGlobalHard || a.batches.empty()) {
    if (a.poslists.empty()) throw ValidationError("training needs --batches or --poslists");
    MiningConfig mining = a.mining;
    mining.seed = a.seed;
    trainer.UseMiner(ParsePositiveLists(text::ReadFile(a.poslists)), mining);
  } else {
    trainer.UseBatches(ParseBatches(text::ReadFile(a.batches)));
  }
  if (!a.resume.empty()) trainer.Restore(ReadCheckpointFile(a.resume));

  std::ofstream log_file;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw Error("cannot open " + a.log + " for writing");
  }
  std::ostream& log = a.log.empty() ? out : log_file;
  log << "# step epoch lr loss active_terms\n";
  while (!trainer.done()) {
    const MetricRecord m = trainer.Step();
    log << m.Format() << '\n';
    if (g.verbosity > 0 && (m.step + 1) % cfg.iterations_per_epoch == 0) {
      err << "epoch " << m.epoch << " done, loss " << m.loss << '\n';
    }
  }
  WriteCheckpointFile(a.out, trainer.state());
  if (!a.log.empty()) {
    out << "steps=" << trainer.state().step
        << " descriptor_extractions=" << trainer.state().descriptor_extractions << '\n';
  }
  return kExitOk;
}

int RunEmbed(const EmbedArgs& a, std::ostream& out) {
  const auto named = LoadNamedMaps(a.maps);
  std::unique_ptr<Head> head;
  if (!a.params.empty()) {
    head = LoadHead(a.params);
    if (!a.head.empty() && ParseAggregationKind(a.head) != head->kind()) {
      throw ValidationError("--head " + a.head + " does not match the parameter file head '" +
                            std::string(AggregationName(head->kind())) + "'");
    }
  } else {
    if (a.head.empty()) throw ValidationError("embed needs --head or --params");
    const FeatureMap& first = named.front().second;
    const auto kind = ParseAggregationKind(a.head);
    head = InitializeHead(
        SpecFromFlags(a.head, kind == AggregationKind::kLinear ? first.size() : first.channels(),
                      a.clusters, a.sharpness, 0),
        MapsOnly(named), a.seed);
  }
  DescriptorSet set(head->output_dim());
  for (const auto& [name, map] : named) {
    const Eigen::VectorXd v = head->Forward(map);
    set.Add(name, std::vector<double>(v.data(), v.data() + v.size()));
  }
  WriteDescriptorFile(a.out, set);
  out << "descriptors=" << set.size() << " dim=" << set.dim() << '\n';
  return kExitOk;
}

int RunIndex(const IndexArgs& a, std::ostream& out) {
  const HnswIndex index = HnswIndex::Build(ReadDescriptorFile(a.desc), a.cfg);
  WriteIndexFile(a.out, index);
  out << "indexed=" << index.size() << " levels=" << index.max_level() + 1 << '\n';
  return kExitOk;
}

int RunRetrieve(const RetrieveArgs& a, std::ostream& out) {
  HnswIndex index = ReadIndexFile(a.index);
  if (a.ef_search) index.set_ef_search(a.ef_search);
  const RetrievalResult result = index.Query(ReadDescriptorFile(a.desc), a.k);
  text::WriteFile(a.out, WritePairs(result));
  out << "queries=" << result.queries.size() << " k=" << a.k << '\n';
  return kExitOk;
}

int RunEvaluate(const EvaluateArgs& a, std::ostream& out) {
  const RetrievalResult result = ParsePairs(text::ReadFile(a.pairs));
  const GroundTruth truth =
      GroundTruth::FromMatches(ReadMatchesFile(a.matches), NamesFrom(a.recon), a.inlier_threshold);
  out << RetrievalAccuracy(result, truth).Format() << '\n';
  return kExitOk;
}

}  // namespace

int Dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Match-pair retrieval toolkit: annotation, mining, training and retrieval",
               "pairforge"};
  app.set_config("--config", "", "Read options from a TOML config file");
  app.option_defaults()->always_capture_default();
  GlobalOptions global;
  bool dump_config = false;
  app.add_flag("-v,--verbose", global.verbosity, "Increase verbosity (repeatable)");
  app.add_option("--threads", global.threads, "Thread count hint")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", global.deterministic,
               "Single-threaded reductions for bit-identical output");
  app.add_flag("--dump-config", dump_config, "Print the effective configuration and exit")
      ->configurable(false);
  app.require_subcommand(1);
  app.fallthrough();

  std::map<std::string, std::function<int()>> runners;
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->configurable();
    return s;
  };

  SynthArgs synth;
  {
    auto* s = sub("synth", "Generate a synthetic multi-scene dataset");
    s->add_option("--scenes", synth.cfg.scenes, "Scene count");
    s->add_option("--grid", synth.grid, "Camera lattice per scene, RxC");
    s->add_option("--overlap", synth.cfg.overlap_fraction, "Neighbor footprint overlap in (0,1)");
    s->add_option("--points-per-cell", synth.cfg.points_per_cell, "Points per unit area");
    s->add_option("--dim", synth.cfg.descriptor_dim, "Base descriptor dimension");
    s->add_option("--channels", synth.cfg.map_channels, "Feature map channels");
    s->add_option("--map-size", synth.map_size, "Feature map spatial size, HxW");
    s->add_option("--noise", synth.cfg.noise_sigma, "Noise sigma");
    s->add_option("--nuisance", synth.cfg.nuisance_sigma, "Descriptor nuisance sigma");
    s->add_option("--seed", synth.cfg.seed, "Random seed");
    s->add_option("--out", synth.out, "Output directory")->required();
    runners["synth"] = [&] { return RunSynth(synth, out); };
  }
  AnnotateArgs annotate;
  {
    auto* s = sub("annotate", "Covisibility and positive lists from a reconstruction");
    s->add_option("--recon", annotate.recon, "Reconstruction file")->required();
    s->add_option("--epsilon", annotate.epsilon, "Minimum GS of a positive (exclusive)");
    s->add_option("--out", annotate.out, "Positive list file")->required();
    runners["annotate"] = [&] { return RunAnnotate(annotate, global, out); };
  }
  GraphArgs graph;
  {
    auto* s = sub("graph", "Weighted view graph from matches");
    s->add_option("--recon", graph.recon, "Reconstruction file")->required();
    s->add_option("--matches", graph.matches, "Matches file")->required();
    s->add_option("--rew", graph.rew, "Inlier vs overlap weight ratio")
        ->check(CLI::Range(0.0, 1.0));
    s->add_option("--out", graph.out, "Graph file")->required();
    runners["graph"] = [&] { return RunGraph(graph, out); };
  }
  PartitionArgs partition;
  {
    auto* s = sub("partition", "Normalized-cut clustering of a view graph");
    s->add_option("--graph", partition.graph, "Graph file")->required();
    s->add_option("--max-size", partition.max_size, "Maximum cluster size")
        ->check(CLI::PositiveNumber);
    s->add_option("--out", partition.out, "Partition file")->required();
    runners["partition"] = [&] { return RunPartition(partition, out); };
  }
  MineArgs mine;
  {
    auto* s = sub("mine", "Mine training batches from positive lists");
    s->add_option("--poslists", mine.poslists, "Positive list file")->required();
    s->add_option("--strategy", mine.strategy, "batched|global-hard")
        ->check(CLI::IsMember({"batched", "global-hard"}));
    s->add_option("--b", mine.cfg.queries_per_batch, "Queries per batch");
    s->add_option("--m", mine.cfg.positives_per_query, "Positives per query");
    s->add_option("--t", mine.cfg.batches, "Batch count");
    s->add_option("--epsilon", mine.cfg.epsilon, "Minimum GS of a positive (exclusive)");
    s->add_option("--seed", mine.cfg.seed, "Random seed");
    s->add_option("--desc", mine.desc, "Descriptors for global-hard mining");
    s->add_option("--recon", mine.recon, "Reconstruction for descriptor names");
    s->add_option("--negatives", mine.negatives, "Hard negatives per query");
    s->add_option("--out", mine.out, "Batch file")->required();
    runners["mine"] = [&] { return RunMine(mine, out); };
  }
  TrainArgs train;
  {
    auto* s = sub("train", "Train an aggregation or linear head");
    s->add_option("--batches", train.batches, "Batch file");
    s->add_option("--inputs", train.inputs, "Directory of .fmap files or a descriptor file")
        ->required();
    s->add_option("--head", train.head, "linear|netvlad|gem|max")
        ->check(CLI::IsMember({"linear", "netvlad", "gem", "max"}));
    s->add_option("--loss", train.loss, "triplet|rll")
        ->check(CLI::IsMember({"triplet", "rll", "ranked-list"}));
    s->add_option("--alpha", train.alpha, "Negative radius; negative picks the head default");
    s->add_option("--margin", train.margin, "Loss margin");
    s->add_option("--epochs", train.cfg.epochs, "Epochs");
    s->add_option("--iters", train.cfg.iterations_per_epoch, "Iterations per epoch");
    s->add_option("--lr", train.cfg.initial_lr, "Initial learning rate");
    s->add_option("--lr-decay", train.cfg.lr_decay_rate, "Exponential decay per epoch");
    s->add_option("--beta1", train.cfg.beta1, "First-moment coefficient");
    s->add_option("--weight-decay", train.cfg.weight_decay, "Decoupled weight decay");
    s->add_option("--seed", train.seed, "Random seed");
    s->add_option("--recon", train.recon, "Reconstruction for image names");
    s->add_option("--init", train.init, "Initial head parameters or checkpoint");
    s->add_option("--resume", train.resume, "Checkpoint to continue from");
    s->add_option("--clusters", train.clusters, "NetVLAD clusters");
    s->add_option("--sharpness", train.sharpness, "NetVLAD assignment sharpness");
    s->add_option("--output-dim", train.output_dim, "Linear head output dimension (0: input)");
    s->add_option("--strategy", train.strategy, "batched|global-hard")
        ->check(CLI::IsMember({"batched", "global-hard"}));
    s->add_option("--poslists", train.poslists, "Positive lists for on-line mining");
    s->add_option("--b", train.mining.queries_per_batch, "Queries per batch (on-line mining)");
    s->add_option("--m", train.mining.positives_per_query, "Positives per query (on-line)");
    s->add_option("--negatives", train.cfg.hard_negatives, "Hard negatives per query");
    s->add_option("--log", train.log, "Metrics log file (default stdout)");
    s->add_option("--out", train.out, "Checkpoint file")->required();
    runners["train"] = [&] { return RunTrain(train, global, out, err); };
  }
  EmbedArgs embed;
  {
    auto* s = sub("embed", "Global descriptors from feature maps");
    s->add_option("--maps", embed.maps, "Directory of .fmap files or a descriptor file")
        ->required();
    s->add_option("--head", embed.head, "linear|netvlad|gem|max")
        ->check(CLI::IsMember({"linear", "netvlad", "gem", "max"}));
    s->add_option("--params", embed.params, "Head parameter file or checkpoint");
    s->add_option("--clusters", embed.clusters, "NetVLAD clusters without --params");
    s->add_option("--sharpness", embed.sharpness, "NetVLAD sharpness without --params");
    s->add_option("--seed", embed.seed, "Random seed for initialization");
    s->add_option("--out", embed.out, "Descriptor file")->required();
    runners["embed"] = [&] { return RunEmbed(embed, out); };
  }
  IndexArgs index;
  {
    auto* s = sub("index", "Build an approximate nearest-neighbor index");
    s->add_option("--desc", index.desc, "Descriptor file")->required();
    s->add_option("--max-degree", index.cfg.max_degree, "Max links per node");
    s->add_option("--ef-construction", index.cfg.ef_construction, "Build beam width");
    s->add_option("--ef-search", index.cfg.ef_search, "Query beam width");
    s->add_option("--seed", index.cfg.seed, "Level assignment seed");
    s->add_option("--out", index.out, "Index file")->required();
    runners["index"] = [&] { return RunIndex(index, out); };
  }
  RetrieveArgs retrieve;
  {
    auto* s = sub("retrieve", "Query an index");
    s->add_option("--index", retrieve.index, "Index file")->required();
    s->add_option("--desc", retrieve.desc, "Query descriptor file")->required();
    s->add_option("--k", retrieve.k, "Retrieval number");
    s->add_option("--ef-search", retrieve.ef_search, "Query beam width (0: index default)");
    s->add_option("--out", retrieve.out, "Pairs file")->required();
    runners["retrieve"] = [&] { return RunRetrieve(retrieve, out); };
  }
  EvaluateArgs evaluate;
  {
    auto* s = sub("evaluate", "Retrieval accuracy of a pairs file against matches");
    s->add_option("--pairs", evaluate.pairs, "Pairs file")->required();
    s->add_option("--matches", evaluate.matches, "Matches file")->required();
    s->add_option("--inlier-threshold", evaluate.inlier_threshold,
                  "Correct pairs have more inliers than this");
    s->add_option("--recon", evaluate.recon, "Reconstruction for image names");
    runners["evaluate"] = [&] { return RunEvaluate(evaluate, out); };
  }

  if (args.empty()) {
    err << app.help();
    return kExitUsage;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  if (const char* env = std::getenv("PAIRFORGE_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0) global.threads = static_cast<unsigned>(n);
    } catch (const std::logic_error&) {
      err << "usage error: PAIRFORGE_THREADS must be a positive integer\n";
      return kExitUsage;
    }
  }
  if (global.deterministic) global.threads = 1;

  CLI::App* chosen = app.get_subcommands().front();
  if (dump_config) {
    out << app.config_to_str(true, false);
    return kExitOk;
  }
  try {
    return runners.at(chosen->get_name())();
  } catch (const std::exception& e) {
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    err << "error: " << message << '\n';
    return kExitDomainError;
  }
}

}  // namespace pairforge
