#include "pairforge/head.h"

#include <sstream>

#include "pairforge/errors.h"
#include "pairforge/io.h"
#include "pairforge/random.h"
#include "pairforge/text.h"

namespace pairforge {

std::string HeadSpec::Format() const {
  std::ostringstream out;
  out << "HEAD " << AggregationName(kind) << " input_dim=" << input_dim;
  switch (kind) {
    case AggregationKind::kLinear:
      out << " output_dim=" << (output_dim ? output_dim : input_dim);
      break;
    case AggregationKind::kNetVlad:
      out << " clusters=" << clusters << " sharpness=" << text::FormatReal(sharpness)
          << " intra_norm=" << (intra_normalize ? 1 : 0);
      break;
    case AggregationKind::kGem:
      out << " shared_p=" << (shared_p ? 1 : 0) << " p=" << text::FormatReal(gem_p);
      break;
    case AggregationKind::kMax:
      break;
  }
  return out.str();
}

HeadSpec HeadSpec::Parse(std::string_view content) {
  const auto lines = text::SplitLines(content);
  if (lines.size() != 1) throw ValidationError("head header must be a single line");
  const auto& line = lines[0];
  line.Expect(3, "HEAD <kind> input_dim=<n> ...");
  if (line.tokens[0].text != "HEAD") line.Fail(0, "expected HEAD");
  HeadSpec spec;
  try {
    spec.kind = ParseAggregationKind(line.tokens[1].text);
  } catch (const ValidationError& e) {
    line.Fail(1, e.what());
  }
  bool have_input = false;
  for (std::size_t i = 2; i < line.tokens.size(); ++i) {
    const auto tok = line.tokens[i].text;
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) line.Fail(i, "expected key=value");
    const std::string key(tok.substr(0, eq));
    // Re-tokenize the value so the numeric helpers report this column.
    text::Line value{line.number, {{tok.substr(eq + 1), line.tokens[i].column + eq + 1}}};
    if (key == "input_dim") {
      spec.input_dim = value.U32(0);
      have_input = true;
    } else if (key == "output_dim") {
      spec.output_dim = value.U32(0);
    } else if (key == "clusters") {
      spec.clusters = value.U32(0);
    } else if (key == "sharpness") {
      spec.sharpness = value.Real(0);
    } else if (key == "intra_norm") {
      spec.intra_normalize = value.U32(0) != 0;
    } else if (key == "shared_p") {
      spec.shared_p = value.U32(0) != 0;
    } else if (key == "p") {
      spec.gem_p = value.Real(0);
    } else {
      line.Fail(i, "unknown head parameter '" + key + "'");
    }
  }
  if (!have_input || spec.input_dim == 0) line.Fail(1, "head needs input_dim > 0");
  if (spec.kind == AggregationKind::kNetVlad && spec.clusters == 0) {
    line.Fail(1, "NetVLAD needs clusters > 0");
  }
  return spec;
}

GlobalDescriptor Head::Describe(const FeatureMap& input, std::string source) const {
  return {Forward(input), kind(), std::move(source)};
}

namespace {

template <typename T>
const T& CacheAs(const Head::Cache& cache) {
  const auto* c = dynamic_cast<const T*>(&cache);
  if (!c) throw ValidationError("head cache does not match the head kind");
  return *c;
}

void CheckChannels(const FeatureMap& input, std::size_t expected) {
  if (input.channels() != expected) {
    throw DimensionError("input has " + std::to_string(input.channels()) +
                         " channels, head expects " + std::to_string(expected));
  }
}

class LinearHead : public Head {
 public:
  struct LinearCache : Cache {
    Eigen::VectorXd x;
    L2Normalized out;
  };

  explicit LinearHead(HeadSpec spec) : Head(std::move(spec)) {
    if (!spec_.output_dim) spec_.output_dim = spec_.input_dim;
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec_.output_dim * spec_.input_dim));
  }

  std::size_t output_dim() const override { return spec_.output_dim; }

  Eigen::VectorXd Forward(const FeatureMap& input, std::unique_ptr<Cache>* cache) const override {
    if (input.size() != spec_.input_dim) {
      throw DimensionError("linear head expects " + std::to_string(spec_.input_dim) +
                           " inputs, got " + std::to_string(input.size()));
    }
    auto c = std::make_unique<LinearCache>();
    c->x = Eigen::Map<const Eigen::VectorXd>(input.values().data(),
                                             static_cast<Eigen::Index>(input.size()));
    c->out = L2Normalized::Of(Weights() * c->x);
    Eigen::VectorXd result = c->out.unit;
    if (cache) *cache = std::move(c);
    return result;
  }

  void Backward(const FeatureMap&, const Cache& cache, const Eigen::VectorXd& upstream,
                Eigen::VectorXd* param_grad) const override {
    const auto& c = CacheAs<LinearCache>(cache);
    const Eigen::VectorXd g = c.out.Backward(upstream);
    // Row-major W: dL/dW = g x^T.
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        param_grad->data(), static_cast<Eigen::Index>(spec_.output_dim),
        static_cast<Eigen::Index>(spec_.input_dim)) += g * c.x.transpose();
  }

 private:
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
  Weights() const {
    return {params_.data(), static_cast<Eigen::Index>(spec_.output_dim),
            static_cast<Eigen::Index>(spec_.input_dim)};
  }
};

class NetVladHead : public Head {
 public:
  struct VladCache : Cache {
    NetVladCache inner;
  };

  explicit NetVladHead(HeadSpec spec) : Head(std::move(spec)) {
    params_ = Eigen::VectorXd::Zero(
        static_cast<Eigen::Index>(spec_.clusters * (2 * spec_.input_dim + 1)));
  }

  std::size_t output_dim() const override { return spec_.clusters * spec_.input_dim; }

  Eigen::VectorXd Forward(const FeatureMap& input, std::unique_ptr<Cache>* cache) const override {
    CheckChannels(input, spec_.input_dim);
    auto c = std::make_unique<VladCache>();
    Eigen::VectorXd out = NetVladForward(input, UnpackNetVlad(spec_, params_), &c->inner);
    if (cache) *cache = std::move(c);
    return out;
  }

  void Backward(const FeatureMap&, const Cache& cache, const Eigen::VectorXd& upstream,
                Eigen::VectorXd* param_grad) const override {
    const auto& c = CacheAs<VladCache>(cache);
    const NetVladParams p = UnpackNetVlad(spec_, params_);
    const NetVladGrads g = NetVladBackward(c.inner, p, upstream);
    NetVladParams packed = p;
    packed.centers = g.centers;
    packed.assign_weights = g.assign_weights;
    packed.assign_bias = g.assign_bias;
    *param_grad += PackNetVlad(packed);
  }
};

class GemHead : public Head {
 public:
  struct GemCache : Cache {
    PooledDescriptor forward;
  };

  explicit GemHead(HeadSpec spec) : Head(std::move(spec)) {
    params_ = Eigen::VectorXd::Constant(
        static_cast<Eigen::Index>(spec_.shared_p ? 1 : spec_.input_dim), spec_.gem_p);
  }

  std::size_t output_dim() const override { return spec_.input_dim; }

  Eigen::VectorXd Forward(const FeatureMap& input, std::unique_ptr<Cache>* cache) const override {
    CheckChannels(input, spec_.input_dim);
    auto c = std::make_unique<GemCache>();
    c->forward = GemForward(input, Params());
    Eigen::VectorXd out = c->forward.output.unit;
    if (cache) *cache = std::move(c);
    return out;
  }

  void Backward(const FeatureMap& input, const Cache& cache, const Eigen::VectorXd& upstream,
                Eigen::VectorXd* param_grad) const override {
    const auto& c = CacheAs<GemCache>(cache);
    *param_grad += GemBackward(input, Params(), c.forward, upstream).p;
  }

  void Project() override { params_ = params_.cwiseMax(1.0); }

 private:
  GemParams Params() const {
    GemParams p;
    p.p = params_;
    return p;
  }
};

class MaxHead : public Head {
 public:
  explicit MaxHead(HeadSpec spec) : Head(std::move(spec)) {}

  std::size_t output_dim() const override { return spec_.input_dim; }

  Eigen::VectorXd Forward(const FeatureMap& input, std::unique_ptr<Cache>* cache) const override {
    CheckChannels(input, spec_.input_dim);
    if (cache) *cache = std::make_unique<Cache>();
    return MaxPoolForward(input).output.unit;
  }

  void Backward(const FeatureMap&, const Cache&, const Eigen::VectorXd&,
                Eigen::VectorXd*) const override {}
};

std::unique_ptr<Head> MakeEmpty(const HeadSpec& spec) {
  if (spec.input_dim == 0) throw ValidationError("head needs input_dim > 0");
  switch (spec.kind) {
    case AggregationKind::kLinear: return std::make_unique<LinearHead>(spec);
    case AggregationKind::kNetVlad:
      if (spec.clusters == 0) throw ValidationError("NetVLAD needs clusters > 0");
      return std::make_unique<NetVladHead>(spec);
    case AggregationKind::kGem: return std::make_unique<GemHead>(spec);
    case AggregationKind::kMax: return std::make_unique<MaxHead>(spec);
  }
  throw ValidationError("unknown head kind");
}

}  // namespace

NetVladParams UnpackNetVlad(const HeadSpec& spec, const Eigen::VectorXd& flat) {
  const auto K = static_cast<Eigen::Index>(spec.clusters);
  const auto D = static_cast<Eigen::Index>(spec.input_dim);
  if (flat.size() != K * (2 * D + 1)) throw DimensionError("NetVLAD parameter vector size");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  NetVladParams p;
  p.centers = Eigen::Map<const RowMajor>(flat.data(), K, D);
  p.assign_weights = Eigen::Map<const RowMajor>(flat.data() + K * D, K, D);
  p.assign_bias = flat.segment(2 * K * D, K);
  p.sharpness = spec.sharpness;
  p.intra_normalize = spec.intra_normalize;
  return p;
}

Eigen::VectorXd PackNetVlad(const NetVladParams& params) {
  const auto K = params.centers.rows();
  const auto D = params.centers.cols();
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::VectorXd flat(K * (2 * D + 1));
  Eigen::Map<RowMajor>(flat.data(), K, D) = params.centers;
  Eigen::Map<RowMajor>(flat.data() + K * D, K, D) = params.assign_weights;
  flat.segment(2 * K * D, K) = params.assign_bias;
  return flat;
}

std::unique_ptr<Head> MakeHead(const HeadSpec& spec, const Eigen::VectorXd& params) {
  auto head = MakeEmpty(spec);
  if (params.size() != head->params().size()) {
    throw DimensionError(std::string(AggregationName(spec.kind)) + " head expects " +
                         std::to_string(head->params().size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  head->params() = params;
  return head;
}

std::unique_ptr<Head> InitializeHead(const HeadSpec& spec, const std::vector<FeatureMap>& maps,
                                     std::uint64_t seed) {
  auto head = MakeEmpty(spec);
  switch (spec.kind) {
    case AggregationKind::kLinear: {
      const auto rows = static_cast<Eigen::Index>(head->spec().output_dim);
      const auto cols = static_cast<Eigen::Index>(spec.input_dim);
      using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Eigen::Map<RowMajor> w(head->params().data(), rows, cols);
      if (rows == cols) {
        w.setIdentity();
      } else {
        Philox rng(seed);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (Eigen::Index r = 0; r < rows; ++r) {
          for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = rng.Normal() * scale;
        }
      }
      break;
    }
    case AggregationKind::kNetVlad: {
      const auto samples = SampleLocalFeatures(maps, 20000, seed);
      head->params() =
          PackNetVlad(NetVladInit(samples, spec.clusters, spec.sharpness, seed + 1));
      break;
    }
    case AggregationKind::kGem:
    case AggregationKind::kMax:
      break;
  }
  return head;
}

std::string WriteHeadParams(const Head& head) {
  std::string out = head.spec().Format();
  out += '\n';
  DescriptorSet set(head.num_params() ? head.num_params() : 1);
  if (head.num_params()) {
    const auto& p = head.params();
    set.Add("params", std::vector<double>(p.data(), p.data() + p.size()));
  }
  out += WriteDescriptors(set).bytes;
  return out;
}

std::unique_ptr<Head> ParseHeadParams(std::string_view bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string_view::npos) {
    throw FormatError(FormatError::Kind::kTruncated, "head parameters: missing header line");
  }
  const HeadSpec spec = HeadSpec::Parse(bytes.substr(0, newline));
  const auto payload = bytes.substr(newline + 1);
  // The name sidecar is implicit: zero or one row called "params".
  std::string names;
  if (payload.size() >= 12) {
    binary::Reader peek(payload, "head parameters");
    peek.Take(8);
    for (std::uint32_t i = 0, n = peek.U32(); i < n; ++i) names += "params\n";
  }
  const DescriptorSet set = ParseDescriptors(payload, names);
  Eigen::VectorXd params(0);
  if (set.size() == 1) {
    const auto& v = set[0].vector;
    params = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return MakeHead(spec, params);
}

void WriteHeadFile(const std::string& path, const Head& head) {
  text::WriteFile(path, WriteHeadParams(head));
}

std::unique_ptr<Head> ReadHeadFile(const std::string& path) {
  return ParseHeadParams(text::ReadFile(path));
}

}  // namespace pairforge
