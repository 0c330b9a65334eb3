#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "pairforge/aggregate.h"

namespace pairforge {

// Hyperparameters of a trainable head. The linear head maps a flattened input
// (a base descriptor stored as a D x 1 x 1 map) through W and normalizes.
struct HeadSpec {
  AggregationKind kind = AggregationKind::kMax;
  std::size_t input_dim = 0;   // channels
  std::size_t output_dim = 0;  // linear only; 0 means input_dim
  std::size_t clusters = kDefaultClusters;
  double sharpness = kDefaultSharpness;
  bool intra_normalize = true;
  bool shared_p = true;
  double gem_p = kDefaultGemPower;

  // "HEAD <kind> key=value ..." on a single line.
  std::string Format() const;
  static HeadSpec Parse(std::string_view line);
  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

class Head {
 public:
  struct Cache {
    virtual ~Cache() = default;
  };

  virtual ~Head() = default;

  const HeadSpec& spec() const { return spec_; }
  AggregationKind kind() const { return spec_.kind; }
  virtual std::size_t output_dim() const = 0;
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }

  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

  // Unit-norm descriptor; fills *cache for Backward when non-null.
  virtual Eigen::VectorXd Forward(const FeatureMap& input,
                                  std::unique_ptr<Cache>* cache = nullptr) const = 0;
  // Adds dL/dparams to param_grad given dL/d(output).
  virtual void Backward(const FeatureMap& input, const Cache& cache,
                        const Eigen::VectorXd& upstream, Eigen::VectorXd* param_grad) const = 0;
  // Restores parameter constraints after an update.
  virtual void Project() {}

  GlobalDescriptor Describe(const FeatureMap& input, std::string source) const;

 protected:
  explicit Head(HeadSpec spec) : spec_(std::move(spec)) {}
  HeadSpec spec_;
  Eigen::VectorXd params_;
};

// Head with the given parameters; throws DimensionError on a size mismatch.
std::unique_ptr<Head> MakeHead(const HeadSpec& spec, const Eigen::VectorXd& params);

// Default initialization: identity (linear), p (GeM), k-means over sampled
// local features of maps (NetVLAD).
std::unique_ptr<Head> InitializeHead(const HeadSpec& spec, const std::vector<FeatureMap>& maps,
                                     std::uint64_t seed);

// NetVLAD parameter layout inside the flat vector: centers, weights (both
// K x D row-major), then biases.
NetVladParams UnpackNetVlad(const HeadSpec& spec, const Eigen::VectorXd& flat);
Eigen::VectorXd PackNetVlad(const NetVladParams& params);

// Header line followed by a DVEC block holding the parameters as one row.
std::string WriteHeadParams(const Head& head);
std::unique_ptr<Head> ParseHeadParams(std::string_view bytes);
void WriteHeadFile(const std::string& path, const Head& head);
std::unique_ptr<Head> ReadHeadFile(const std::string& path);

}  // namespace pairforge
