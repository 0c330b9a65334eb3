#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pairforge/model.h"

namespace pairforge {

using Point2 = std::array<double, 2>;

// Area of the convex hull (monotone chain). Fewer than three non-collinear
// points give 0.
double ConvexHullArea(std::span<const Point2> points);

struct ViewGraphEdge {
  ImagePair pair;
  std::uint32_t n_inlier = 0;
  double w_inlier = 0;
  double w_overlap = 0;
  double weight = 0;
  friend bool operator==(const ViewGraphEdge&, const ViewGraphEdge&) = default;
};

struct ViewGraph {
  std::vector<ImageId> vertices;
  std::vector<ViewGraphEdge> edges;
  double r_ew = 0.5;
  std::uint32_t n_maxinlier = 0;
};

inline constexpr double kDefaultEdgeRatio = 0.5;
inline constexpr std::size_t kDefaultMaxClusterSize = 500;

// Edge metric: weight = r_ew * log(n)/log(n_max) + (1 - r_ew) * hull overlap,
// where hull overlap = (CH_i + CH_j) / (A_i + A_j). Throws
// DegenerateGraphError when n_maxinlier < 2.
ViewGraphEdge ComputeEdge(const PairMatches& match, const ImageRecord& image_i,
                          const ImageRecord& image_j, std::uint32_t n_maxinlier,
                          double r_ew);

// One edge per matched pair with at least one inlier. Vertices are all images
// of the reconstruction.
ViewGraph BuildViewGraph(const MatchSet& matches, const Reconstruction& recon,
                         double r_ew = kDefaultEdgeRatio);

// Weighted undirected graph over dense vertex indices.
struct WeightedGraph {
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency;

  std::size_t size() const { return adjacency.size(); }
  void AddEdge(std::size_t a, std::size_t b, double w);
  double Degree(std::size_t v) const;
};

// Ncut(A, B) = cut/assoc(A, V) + cut/assoc(B, V). `in_a[v]` selects side A.
double NcutValue(const WeightedGraph& graph, const std::vector<bool>& in_a);

struct Bipartition {
  std::vector<bool> in_a;
  double ncut = 0;
  std::size_t iterations = 0;  // power iterations spent
  std::size_t moves = 0;       // refinement moves applied
};

struct SpectralOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 10000;
  // Kernighan-Lin style vertex moves on the Ncut objective after the sweep.
  bool refine = true;
};

// Two-way split of a connected graph with at least two vertices: the second
// generalized eigenvector of (D - W) y = lambda D y, the best of the n - 1
// sweep cuts along its sorted entries, then optional move-based refinement.
Bipartition SpectralBipartition(const WeightedGraph& graph,
                                const SpectralOptions& options = {});

struct Partition {
  std::map<ImageId, std::size_t> assignment;
  std::size_t num_clusters = 0;

  std::vector<std::vector<ImageId>> Clusters() const;
};

// Recursive spectral bisection of every connected component until each
// cluster holds at most max_cluster_size vertices. Clusters are numbered by
// their smallest image id.
Partition NormalizedCut(const ViewGraph& graph,
                        std::size_t max_cluster_size = kDefaultMaxClusterSize,
                        const SpectralOptions& options = {});

// Graph file: optional `GRAPH <r_ew> <n_maxinlier>` header, `VERTEX <id>`
// lines, and `EDGE <i> <j> <n_inlier> <w_inlier> <w_overlap> <weight>`.
std::string WriteViewGraph(const ViewGraph& graph);
ViewGraph ParseViewGraph(std::string_view content);

// `CLUSTER <cluster_idx> <image_id>...` lines.
std::string WritePartition(const Partition& partition);
Partition ParsePartition(std::string_view content);

}  // namespace pairforge
