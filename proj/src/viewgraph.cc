#include "pairforge/viewgraph.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "pairforge/errors.h"
#include "pairforge/random.h"
#include "pairforge/text.h"

namespace pairforge {
namespace {

double Cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Kernighan-Lin style passes on the Ncut objective: each pass moves up to
// kMaxPassMoves vertices one at a time, each move the best available even if
// it worsens the cut, every vertex at most once, then rolls back to the best
// prefix. Stops when a pass finds no improvement. Returns the moves kept.
constexpr std::size_t kMaxPassMoves = 256;
constexpr std::size_t kMaxPasses = 50;
constexpr std::size_t kRefineStarts = 4;

std::size_t RefineBipartition(const WeightedGraph& graph, const std::vector<double>& degree,
                              std::vector<bool>* in_a) {
  const std::size_t n = graph.size();
  auto& side = *in_a;
  // to_a[v]: edge weight from v into side A, self loops excluded.
  std::vector<double> to_a(n, 0.0);
  double cut = 0, vol_a = 0, volume = 0;
  std::size_t size_a = 0;
  for (std::size_t v = 0; v < n; ++v) {
    volume += degree[v];
    if (side[v]) vol_a += degree[v], ++size_a;
    for (const auto& [u, w] : graph.adjacency[v]) {
      if (u == v) continue;
      if (side[u]) to_a[v] += w;
      if (side[v] && !side[u]) cut += w;
    }
  }
  const auto ncut = [&](double c, double va) { return c / va + c / (volume - va); };
  const auto moved_cut = [&](std::size_t v) {
    const double to_b = degree[v] - to_a[v];
    return side[v] ? cut - to_b + to_a[v] : cut - to_a[v] + to_b;
  };
  const auto flip = [&](std::size_t v) {
    cut = moved_cut(v);
    vol_a += side[v] ? -degree[v] : degree[v];
    size_a = side[v] ? size_a - 1 : size_a + 1;
    side[v] = !side[v];
    for (const auto& [u, w] : graph.adjacency[v]) {
      if (u != v) to_a[u] += side[v] ? w : -w;
    }
  };

  std::size_t kept = 0;
  std::vector<bool> locked(n);
  std::vector<std::size_t> sequence;
  for (std::size_t pass = 0; pass < kMaxPasses; ++pass) {
    std::fill(locked.begin(), locked.end(), false);
    sequence.clear();
    const double start = ncut(cut, vol_a);
    double best = start;
    std::size_t best_len = 0;
    for (std::size_t step = 0; step < std::min(n, kMaxPassMoves); ++step) {
      std::size_t pick = n;
      double pick_value = std::numeric_limits<double>::infinity();
      for (std::size_t v = 0; v < n; ++v) {
        if (locked[v] || (side[v] ? size_a == 1 : size_a + 1 == n)) continue;
        const double va = side[v] ? vol_a - degree[v] : vol_a + degree[v];
        const double value = ncut(moved_cut(v), va);
        if (value < pick_value) pick_value = value, pick = v;
      }
      if (pick == n) break;
      flip(pick);
      locked[pick] = true;
      sequence.push_back(pick);
      if (pick_value < best - 1e-12 * std::max(1.0, start)) {
        best = pick_value;
        best_len = sequence.size();
      }
    }
    while (sequence.size() > best_len) {
      flip(sequence.back());
      sequence.pop_back();
    }
    if (best_len == 0) break;
    kept += best_len;
  }
  return kept;
}

}  // namespace

double ConvexHullArea(std::span<const Point2> points) {
  std::vector<Point2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return 0.0;

  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && Cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && Cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  if (hull.size() < 3) return 0.0;

  double twice_area = 0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    twice_area += a[0] * b[1] - a[1] * b[0];
  }
  return std::abs(twice_area) / 2.0;
}

ViewGraphEdge ComputeEdge(const PairMatches& match, const ImageRecord& image_i,
                          const ImageRecord& image_j, std::uint32_t n_maxinlier,
                          double r_ew) {
  if (n_maxinlier < 2) {
    throw DegenerateGraphError("maximum inlier count " + std::to_string(n_maxinlier) +
                               " < 2 makes log-normalized inlier weights undefined");
  }
  const auto n = static_cast<std::uint32_t>(match.num_inliers());
  if (n == 0 || n > n_maxinlier) {
    throw ValidationError("pair inlier count " + std::to_string(n) +
                          " outside [1, n_maxinlier]");
  }
  std::vector<Point2> pi, pj;
  pi.reserve(n);
  pj.reserve(n);
  for (const auto& c : match.inliers) {
    pi.push_back({c.xi, c.yi});
    pj.push_back({c.xj, c.yj});
  }
  ViewGraphEdge edge;
  edge.pair = match.pair;
  edge.n_inlier = n;
  edge.w_inlier = std::log(static_cast<double>(n)) / std::log(static_cast<double>(n_maxinlier));
  edge.w_overlap = std::min(
      1.0, (ConvexHullArea(pi) + ConvexHullArea(pj)) / (image_i.Area() + image_j.Area()));
  edge.weight = r_ew * edge.w_inlier + (1.0 - r_ew) * edge.w_overlap;
  return edge;
}

ViewGraph BuildViewGraph(const MatchSet& matches, const Reconstruction& recon, double r_ew) {
  if (!(r_ew >= 0.0 && r_ew <= 1.0)) {
    throw ValidationError("edge weighting coefficient must lie in [0, 1]");
  }
  ViewGraph graph;
  graph.r_ew = r_ew;
  for (const auto& image : recon.images()) graph.vertices.push_back(image.id);
  std::sort(graph.vertices.begin(), graph.vertices.end());

  for (const auto& pm : matches.pairs) {
    for (ImageId id : {pm.pair.first, pm.pair.second}) {
      if (recon.FindImage(id) == nullptr) {
        throw ValidationError("matches reference unknown image id " + std::to_string(id.value));
      }
    }
    graph.n_maxinlier =
        std::max(graph.n_maxinlier, static_cast<std::uint32_t>(pm.num_inliers()));
  }
  for (const auto& pm : matches.pairs) {
    if (pm.num_inliers() == 0) continue;
    graph.edges.push_back(ComputeEdge(pm, recon.Image(pm.pair.first),
                                      recon.Image(pm.pair.second), graph.n_maxinlier, r_ew));
  }
  std::sort(graph.edges.begin(), graph.edges.end(),
            [](const ViewGraphEdge& a, const ViewGraphEdge& b) { return a.pair < b.pair; });
  return graph;
}

void WeightedGraph::AddEdge(std::size_t a, std::size_t b, double w) {
  adjacency[a].emplace_back(b, w);
  adjacency[b].emplace_back(a, w);
}

double WeightedGraph::Degree(std::size_t v) const {
  double d = 0;
  for (const auto& [u, w] : adjacency[v]) d += w;
  return d;
}

double NcutValue(const WeightedGraph& graph, const std::vector<bool>& in_a) {
  double cut = 0, vol_a = 0, vol_b = 0;
  for (std::size_t v = 0; v < graph.size(); ++v) {
    for (const auto& [u, w] : graph.adjacency[v]) {
      (in_a[v] ? vol_a : vol_b) += w;
      if (in_a[v] && !in_a[u]) cut += w;
    }
  }
  if (vol_a == 0 || vol_b == 0) return std::numeric_limits<double>::infinity();
  return cut / vol_a + cut / vol_b;
}

Bipartition SpectralBipartition(const WeightedGraph& graph, const SpectralOptions& options) {
  const std::size_t n = graph.size();
  if (n < 2) throw ValidationError("bipartition needs at least two vertices");

  std::vector<double> degree(n), inv_sqrt(n), top(n);
  double top_norm = 0;
  for (std::size_t v = 0; v < n; ++v) {
    degree[v] = graph.Degree(v);
    if (degree[v] <= 0) throw ValidationError("bipartition needs a connected graph");
    inv_sqrt[v] = 1.0 / std::sqrt(degree[v]);
    top[v] = std::sqrt(degree[v]);
    top_norm += degree[v];
  }
  top_norm = std::sqrt(top_norm);
  for (auto& t : top) t /= top_norm;

  auto deflate_normalize = [&](std::vector<double>* x) {
    const double proj = std::inner_product(x->begin(), x->end(), top.begin(), 0.0);
    double norm = 0;
    for (std::size_t v = 0; v < n; ++v) {
      (*x)[v] -= proj * top[v];
      norm += (*x)[v] * (*x)[v];
    }
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (auto& xi : *x) xi /= norm;
    }
    return norm;
  };

  // Shifted operator (I + D^-1/2 W D^-1/2) / 2 has spectrum in [0, 1], so
  // power iteration on the deflated space finds the second eigenvector.
  Philox rng(0x5eed);
  std::vector<double> x(n), y(n);
  for (auto& xi : x) xi = rng.Uniform(-1.0, 1.0);
  if (deflate_normalize(&x) == 0) x[0] = 1.0, deflate_normalize(&x);

  Bipartition result;
  for (result.iterations = 0; result.iterations < options.max_iterations;) {
    ++result.iterations;
    for (std::size_t v = 0; v < n; ++v) {
      double acc = 0;
      for (const auto& [u, w] : graph.adjacency[v]) acc += w * inv_sqrt[u] * x[u];
      y[v] = 0.5 * (x[v] + inv_sqrt[v] * acc);
    }
    if (deflate_normalize(&y) == 0) break;
    double diff = 0;
    for (std::size_t v = 0; v < n; ++v) diff = std::max(diff, std::abs(y[v] - x[v]));
    x.swap(y);
    if (diff < options.tolerance) break;
  }

  std::vector<double> indicator(n);
  for (std::size_t v = 0; v < n; ++v) indicator[v] = x[v] * inv_sqrt[v];
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return indicator[a] < indicator[b]; });

  const double volume = std::accumulate(degree.begin(), degree.end(), 0.0);
  std::vector<bool> in_a(n, false);
  double cut = 0, vol_a = 0;
  std::vector<std::pair<double, std::size_t>> sweep;  // (ncut, last position in A)
  for (std::size_t pos = 0; pos + 1 < n; ++pos) {
    const std::size_t v = order[pos];
    double to_a = 0;
    for (const auto& [u, w] : graph.adjacency[v]) {
      if (in_a[u]) to_a += w;
    }
    in_a[v] = true;
    cut += degree[v] - 2.0 * to_a;
    vol_a += degree[v];
    sweep.emplace_back(cut / vol_a + cut / (volume - vol_a), pos);
  }
  // Refinement starts from the few best sweep cuts; the lowest result wins.
  std::stable_sort(sweep.begin(), sweep.end());
  const std::size_t starts = options.refine ? std::min(sweep.size(), kRefineStarts) : 1;
  result.ncut = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < starts; ++s) {
    std::vector<bool> in_a_s(n, false);
    for (std::size_t pos = 0; pos <= sweep[s].second; ++pos) in_a_s[order[pos]] = true;
    const std::size_t moves = options.refine ? RefineBipartition(graph, degree, &in_a_s) : 0;
    const double value = NcutValue(graph, in_a_s);
    if (value < result.ncut) {
      result.ncut = value;
      result.in_a = std::move(in_a_s);
      result.moves = moves;
    }
  }
  return result;
}

std::vector<std::vector<ImageId>> Partition::Clusters() const {
  std::vector<std::vector<ImageId>> clusters(num_clusters);
  for (const auto& [image, cluster] : assignment) clusters[cluster].push_back(image);
  return clusters;
}

namespace {

struct Splitter {
  const WeightedGraph& graph;
  std::size_t max_size;
  const SpectralOptions& options;
  std::vector<std::vector<std::size_t>> clusters;

  // Connected components of the subgraph induced by `members`.
  std::vector<std::vector<std::size_t>> Components(const std::vector<std::size_t>& members) {
    std::unordered_map<std::size_t, std::size_t> local;
    for (std::size_t i = 0; i < members.size(); ++i) local[members[i]] = i;
    std::vector<bool> seen(members.size(), false);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < members.size(); ++s) {
      if (seen[s]) continue;
      std::vector<std::size_t> comp, stack = {s};
      seen[s] = true;
      while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        comp.push_back(members[i]);
        for (const auto& [u, w] : graph.adjacency[members[i]]) {
          const auto it = local.find(u);
          if (it != local.end() && !seen[it->second] && w > 0) {
            seen[it->second] = true;
            stack.push_back(it->second);
          }
        }
      }
      std::sort(comp.begin(), comp.end());
      out.push_back(std::move(comp));
    }
    return out;
  }

  void Split(const std::vector<std::size_t>& members) {
    for (auto& comp : Components(members)) {
      if (comp.size() <= max_size) {
        clusters.push_back(std::move(comp));
        continue;
      }
      std::unordered_map<std::size_t, std::size_t> local;
      for (std::size_t i = 0; i < comp.size(); ++i) local[comp[i]] = i;
      WeightedGraph sub;
      sub.adjacency.resize(comp.size());
      for (std::size_t i = 0; i < comp.size(); ++i) {
        for (const auto& [u, w] : graph.adjacency[comp[i]]) {
          const auto it = local.find(u);
          if (it != local.end()) sub.adjacency[i].emplace_back(it->second, w);
        }
      }
      const Bipartition bi = SpectralBipartition(sub, options);
      std::vector<std::size_t> a, b;
      for (std::size_t i = 0; i < comp.size(); ++i) (bi.in_a[i] ? a : b).push_back(comp[i]);
      Split(a);
      Split(b);
    }
  }
};

}  // namespace

Partition NormalizedCut(const ViewGraph& graph, std::size_t max_cluster_size,
                        const SpectralOptions& options) {
  if (max_cluster_size < 2) throw ValidationError("max cluster size must be >= 2");
  std::set<ImageId> vertex_set(graph.vertices.begin(), graph.vertices.end());
  for (const auto& e : graph.edges) {
    vertex_set.insert(e.pair.first);
    vertex_set.insert(e.pair.second);
  }
  const std::vector<ImageId> vertices(vertex_set.begin(), vertex_set.end());
  std::unordered_map<ImageId, std::size_t> index;
  for (std::size_t i = 0; i < vertices.size(); ++i) index[vertices[i]] = i;

  WeightedGraph wg;
  wg.adjacency.resize(vertices.size());
  for (const auto& e : graph.edges) {
    if (e.pair.first == e.pair.second) continue;
    wg.AddEdge(index.at(e.pair.first), index.at(e.pair.second), e.weight);
  }

  Splitter splitter{wg, max_cluster_size, options, {}};
  std::vector<std::size_t> all(vertices.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  splitter.Split(all);
  std::sort(splitter.clusters.begin(), splitter.clusters.end());

  Partition partition;
  partition.num_clusters = splitter.clusters.size();
  for (std::size_t c = 0; c < splitter.clusters.size(); ++c) {
    for (std::size_t v : splitter.clusters[c]) partition.assignment[vertices[v]] = c;
  }
  return partition;
}

std::string WriteViewGraph(const ViewGraph& graph) {
  std::ostringstream out;
  out << "# GRAPH <r_ew> <n_maxinlier>; VERTEX <id>;"
         " EDGE <id_i> <id_j> <n_inlier> <w_inlier> <w_overlap> <weight>\n";
  out << "GRAPH " << text::FormatReal(graph.r_ew) << ' ' << graph.n_maxinlier << '\n';
  for (ImageId v : graph.vertices) out << "VERTEX " << v << '\n';
  for (const auto& e : graph.edges) {
    out << "EDGE " << e.pair.first << ' ' << e.pair.second << ' ' << e.n_inlier << ' '
        << text::FormatReal(e.w_inlier) << ' ' << text::FormatReal(e.w_overlap) << ' '
        << text::FormatReal(e.weight) << '\n';
  }
  return out.str();
}

ViewGraph ParseViewGraph(std::string_view content) {
  ViewGraph graph;
  bool has_header = false;
  std::set<ImageId> vertices;
  std::set<ImagePair> pairs;
  for (const auto& line : text::SplitLines(content)) {
    const auto keyword = line.tokens[0].text;
    if (keyword == "GRAPH") {
      line.Expect(3, "GRAPH <r_ew> <n_maxinlier>");
      graph.r_ew = line.Real(1);
      graph.n_maxinlier = line.U32(2);
      has_header = true;
    } else if (keyword == "VERTEX") {
      line.Expect(2, "VERTEX <id>");
      vertices.insert(ImageId(line.U32(1)));
    } else if (keyword == "EDGE") {
      line.Expect(7, "EDGE <id_i> <id_j> <n_inlier> <w_inlier> <w_overlap> <weight>");
      if (line.tokens.size() > 7) line.Fail(7, "unexpected trailing field");
      ViewGraphEdge e;
      const ImageId a(line.U32(1)), b(line.U32(2));
      if (a == b) line.Fail(2, "self edge");
      e.pair = ImagePair(a, b);
      if (!pairs.insert(e.pair).second) line.Fail(1, "duplicate edge");
      e.n_inlier = line.U32(3);
      e.w_inlier = line.Real(4);
      e.w_overlap = line.Real(5);
      e.weight = line.Real(6);
      if (e.weight < 0) line.Fail(6, "negative edge weight");
      vertices.insert(a);
      vertices.insert(b);
      graph.edges.push_back(e);
    } else {
      line.Fail(0, "unknown record '" + std::string(keyword) + "'");
    }
  }
  if (!has_header) {
    for (const auto& e : graph.edges) graph.n_maxinlier = std::max(graph.n_maxinlier, e.n_inlier);
  }
  graph.vertices.assign(vertices.begin(), vertices.end());
  return graph;
}

std::string WritePartition(const Partition& partition) {
  std::ostringstream out;
  const auto clusters = partition.Clusters();
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    out << "CLUSTER " << c;
    for (ImageId id : clusters[c]) out << ' ' << id;
    out << '\n';
  }
  return out.str();
}

Partition ParsePartition(std::string_view content) {
  Partition partition;
  std::set<std::size_t> indices;
  for (const auto& line : text::SplitLines(content)) {
    if (line.tokens[0].text != "CLUSTER") line.Fail(0, "expected 'CLUSTER'");
    line.Expect(3, "CLUSTER <cluster_idx> <image_id>...");
    const std::size_t c = line.U32(1);
    if (!indices.insert(c).second) line.Fail(1, "duplicate cluster index");
    for (std::size_t t = 2; t < line.tokens.size(); ++t) {
      if (!partition.assignment.emplace(ImageId(line.U32(t)), c).second) {
        line.Fail(t, "image assigned to more than one cluster");
      }
    }
  }
  partition.num_clusters = indices.size();
  if (!indices.empty() && *indices.rbegin() + 1 != indices.size()) {
    throw ParseError(1, 1, "cluster indices must be 0..k-1");
  }
  return partition;
}

}  // namespace pairforge
