#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pairforge/aggregate.h"
#include "pairforge/annotate.h"
#include "pairforge/cli.h"
#include "pairforge/errors.h"
#include "pairforge/io.h"
#include "pairforge/losses.h"
#include "pairforge/retrieval.h"
#include "pairforge/synth.h"
#include "pairforge/viewgraph.h"

namespace py = pybind11;
using namespace pairforge;

namespace {

DescriptorSet ToSet(const std::vector<std::string>& names, const Eigen::MatrixXd& rows) {
  if (static_cast<Eigen::Index>(names.size()) != rows.rows()) {
    throw DimensionError("names and descriptor rows differ in count");
  }
  DescriptorSet set(static_cast<std::size_t>(rows.cols()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const Eigen::VectorXd r = rows.row(i).transpose();
    set.Add(names[static_cast<std::size_t>(i)], std::vector<double>(r.data(), r.data() + r.size()));
  }
  return set;
}

py::list ResultToList(const RetrievalResult& result) {
  py::list out;
  for (const auto& q : result.queries) {
    py::list nbrs;
    for (const auto& n : q.neighbors) nbrs.append(py::make_tuple(n.name, n.distance));
    out.append(py::make_tuple(q.query, nbrs));
  }
  return out;
}

FeatureMap MapFromArray(const Eigen::VectorXd& flat, std::size_t d, std::size_t h, std::size_t w) {
  return FeatureMap(d, h, w, std::vector<double>(flat.data(), flat.data() + flat.size()));
}

std::vector<Eigen::VectorXd> Rows(const Eigen::MatrixXd& m) {
  std::vector<Eigen::VectorXd> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(m.row(i).transpose());
  return out;
}

}  // namespace

PYBIND11_MODULE(_pairforge, m) {
  m.doc() = "Covisibility-supervised training pairs and image retrieval";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NormalizationError>(m, "NormalizationError", base.ptr());
  py::register_exception<DegenerateGraphError>(m, "DegenerateGraphError", base.ptr());
  py::register_exception<MiningError>(m, "MiningError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());
  py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());

  m.def(
      "run",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = Dispatch(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Run one CLI command line; returns (exit_code, stdout, stderr).");

  m.def(
      "synth",
      [](const std::string& out_dir, std::size_t scenes, std::size_t rows, std::size_t cols,
         double overlap, std::uint64_t seed) {
        SynthConfig c;
        c.scenes = scenes;
        c.grid_rows = rows;
        c.grid_cols = cols;
        c.overlap_fraction = overlap;
        c.seed = seed;
        const auto data = Generate(c);
        WriteSynthOutput(out_dir, data);
        return data.recon.images().size();
      },
      py::arg("out_dir"), py::arg("scenes") = 3, py::arg("rows") = 4, py::arg("cols") = 4,
      py::arg("overlap") = 0.5, py::arg("seed") = 0,
      "Write a synthetic dataset under out_dir; returns the image count.");

  m.def(
      "covisibility",
      [](const std::string& recon_text, unsigned threads) {
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> out;
        for (const auto& [pair, n] : BuildCovisibility(ParseReconstruction(recon_text), threads).SortedEntries()) {
          out[{pair.first.value, pair.second.value}] = n;
        }
        return out;
      },
      py::arg("recon_text"), py::arg("threads") = 1,
      "Common 3D point counts keyed by (smaller id, larger id).");

  m.def(
      "positive_lists",
      [](const std::string& recon_text, std::uint32_t epsilon) {
        const auto recon = ParseReconstruction(recon_text);
        return WritePositiveLists(BuildPositiveLists(BuildCovisibility(recon), recon, epsilon));
      },
      py::arg("recon_text"), py::arg("epsilon") = kDefaultEpsilon);

  m.def(
      "ranked_list_loss",
      [](const Eigen::VectorXd& q, const Eigen::MatrixXd& positives, const Eigen::MatrixXd& negatives,
         double alpha, double margin, bool nontrivial_only) {
        LossConfig c{margin, alpha, nontrivial_only};
        c.Validate();
        const auto p = Rows(positives), n = Rows(negatives);
        const auto r = RankedListLoss(q, p, n, c);
        return py::make_tuple(r.value, r.grads);
      },
      py::arg("query"), py::arg("positives"), py::arg("negatives"), py::arg("alpha") = kDefaultAlpha,
      py::arg("margin") = kDefaultMargin, py::arg("nontrivial_only") = true,
      "Returns (value, gradients) with gradients ordered query, positives, negatives.");

  m.def(
      "triplet_loss",
      [](const Eigen::VectorXd& a, const Eigen::VectorXd& p, const Eigen::VectorXd& n, double margin) {
        LossConfig c;
        c.margin = margin;
        const auto r = TripletLoss(a, p, n, c);
        return py::make_tuple(r.value, r.grads);
      },
      py::arg("anchor"), py::arg("positive"), py::arg("negative"), py::arg("margin") = kDefaultMargin);

  m.def(
      "gem",
      [](const Eigen::VectorXd& flat, std::size_t d, std::size_t h, std::size_t w, double p) {
        return GemForward(MapFromArray(flat, d, h, w), GemParams::Shared(p)).output.unit;
      },
      py::arg("values"), py::arg("channels"), py::arg("rows"), py::arg("cols"),
      py::arg("p") = kDefaultGemPower, "GeM descriptor of a channel-major D x H x W map.");

  m.def(
      "netvlad",
      [](const Eigen::VectorXd& flat, std::size_t d, std::size_t h, std::size_t w,
         const Eigen::MatrixXd& centers, const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias) {
        NetVladParams params;
        params.centers = centers;
        params.assign_weights = weights;
        params.assign_bias = bias;
        return NetVladForward(MapFromArray(flat, d, h, w), params);
      },
      py::arg("values"), py::arg("channels"), py::arg("rows"), py::arg("cols"), py::arg("centers"),
      py::arg("weights"), py::arg("bias"));

  m.def(
      "brute_force_knn",
      [](const std::vector<std::string>& names, const Eigen::MatrixXd& rows, std::size_t k) {
        const auto set = ToSet(names, rows);
        return ResultToList(BruteForceKnn(set, set, k));
      },
      py::arg("names"), py::arg("descriptors"), py::arg("k"));

  py::class_<HnswIndex>(m, "HnswIndex")
      .def_static(
          "build",
          [](const std::vector<std::string>& names, const Eigen::MatrixXd& rows, std::size_t max_degree,
             std::size_t ef_construction, std::size_t ef_search, std::uint64_t seed) {
            HnswConfig c{max_degree, ef_construction, ef_search, seed};
            c.Validate();
            return HnswIndex::Build(ToSet(names, rows), c);
          },
          py::arg("names"), py::arg("descriptors"), py::arg("max_degree") = 16,
          py::arg("ef_construction") = 200, py::arg("ef_search") = 64, py::arg("seed") = 0)
      .def(
          "query",
          [](const HnswIndex& index, const std::vector<std::string>& names, const Eigen::MatrixXd& rows,
             std::size_t k) { return ResultToList(index.Query(ToSet(names, rows), k)); },
          py::arg("names"), py::arg("descriptors"), py::arg("k"))
      .def("__len__", &HnswIndex::size)
      .def("serialize", [](const HnswIndex& index) { return py::bytes(index.Serialize()); })
      .def_static("parse", [](const py::bytes& b) { return HnswIndex::Parse(std::string(b)); });

  m.def(
      "normalized_cut",
      [](const std::string& recon_text, const std::string& matches_text, std::size_t max_size) {
        const auto recon = ParseReconstruction(recon_text);
        const auto partition = NormalizedCut(BuildViewGraph(ParseMatches(matches_text), recon), max_size);
        std::map<std::uint32_t, std::size_t> out;
        for (const auto& [id, c] : partition.assignment) out[id.value] = c;
        return out;
      },
      py::arg("recon_text"), py::arg("matches_text"), py::arg("max_size") = kDefaultMaxClusterSize,
      "Cluster index per image id.");
}
