#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Core>

#include "pairforge/annotate.h"
#include "pairforge/model.h"
#include "pairforge/random.h"
#include "pairforge/viewgraph.h"

namespace pairforge::testing {

// Central finite-difference gradient of f at x.
inline Eigen::VectorXd NumericGradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                       const Eigen::VectorXd& x, double step = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||); two (near) zero vectors compare equal.
inline double RelativeError(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale < 1e-12) return 0;
  return (a - b).norm() / scale;
}

inline Eigen::VectorXd RandomVector(Philox& rng, std::size_t n, double sigma = 1.0) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sigma * rng.Normal();
  return v;
}

inline Eigen::VectorXd RandomUnit(Philox& rng, std::size_t n) {
  Eigen::VectorXd v = RandomVector(rng, n);
  return v / v.norm();
}

// Unit vector at chord distance d from unit q.
inline Eigen::VectorXd AtDistance(Philox& rng, const Eigen::VectorXd& q, double d) {
  Eigen::VectorXd u = RandomVector(rng, static_cast<std::size_t>(q.size()));
  u -= u.dot(q) * q;
  u.normalize();
  const double theta = 2 * std::asin(d / 2);
  return std::cos(theta) * q + std::sin(theta) * u;
}

inline FeatureMap RandomMap(Philox& rng, std::size_t d, std::size_t h, std::size_t w,
                            double lo = 0.0, double hi = 1.0) {
  FeatureMap map(d, h, w);
  for (auto& v : map.values()) v = rng.Uniform(lo, hi);
  return map;
}

// Random multi-scene reconstruction; every track stays within one scene.
inline Reconstruction RandomReconstruction(Philox& rng, std::size_t max_images,
                                           std::size_t max_points) {
  const std::size_t num_scenes = 1 + rng.UniformInt(4);
  std::vector<SceneRecord> scenes;
  for (std::size_t s = 0; s < num_scenes; ++s) {
    scenes.push_back({SceneId(static_cast<std::uint32_t>(s * 3 + 1)), "scene" + std::to_string(s)});
  }
  const std::size_t num_images = num_scenes * 2 + rng.UniformInt(max_images - num_scenes * 2 + 1);
  std::vector<ImageRecord> images;
  std::map<std::uint32_t, std::vector<ImageId>> by_scene;
  for (std::size_t i = 0; i < num_images; ++i) {
    ImageRecord image;
    image.id = ImageId(static_cast<std::uint32_t>(i * 2 + 5));
    image.scene = scenes[i < num_scenes * 2 ? i % num_scenes : rng.UniformInt(num_scenes)].id;
    image.name = "img_" + std::to_string(i);
    image.width_px = 100 + static_cast<std::uint32_t>(rng.UniformInt(4000));
    image.height_px = 100 + static_cast<std::uint32_t>(rng.UniformInt(3000));
    by_scene[image.scene.value].push_back(image.id);
    images.push_back(image);
  }
  const std::size_t num_points = rng.UniformInt(max_points + 1);
  std::vector<Point3D> points;
  for (std::size_t p = 0; p < num_points; ++p) {
    const auto& pool = by_scene[scenes[rng.UniformInt(num_scenes)].id.value];
    const std::size_t len = 2 + rng.UniformInt(std::min<std::size_t>(pool.size(), 12) - 1);
    Point3D point;
    point.id = PointId(static_cast<std::uint32_t>(p));
    point.position = {rng.Uniform(-50, 50), rng.Uniform(-50, 50), rng.Uniform(-5, 5)};
    for (std::size_t idx : rng.SampleWithoutReplacement(pool.size(), len)) {
      point.track.push_back({pool[idx], static_cast<std::uint32_t>(rng.UniformInt(10000))});
    }
    points.push_back(std::move(point));
  }
  return Reconstruction(std::move(scenes), std::move(images), std::move(points));
}

// Pairwise track intersection over per-image sorted point sets.
inline std::map<ImagePair, std::uint32_t> BruteForceCovisibility(const Reconstruction& recon) {
  std::map<ImageId, std::vector<std::uint32_t>> seen_by;
  for (const auto& point : recon.points()) {
    for (const auto& el : point.track) seen_by[el.image].push_back(point.id.value);
  }
  for (auto& [id, list] : seen_by) std::sort(list.begin(), list.end());
  std::map<ImagePair, std::uint32_t> out;
  const auto& images = recon.images();
  for (std::size_t a = 0; a < images.size(); ++a) {
    for (std::size_t b = a + 1; b < images.size(); ++b) {
      if (images[a].scene != images[b].scene) continue;
      const auto& la = seen_by[images[a].id];
      const auto& lb = seen_by[images[b].id];
      std::vector<std::uint32_t> common;
      std::set_intersection(la.begin(), la.end(), lb.begin(), lb.end(),
                            std::back_inserter(common));
      if (!common.empty()) {
        out[ImagePair(images[a].id, images[b].id)] = static_cast<std::uint32_t>(common.size());
      }
    }
  }
  return out;
}

// Smallest Ncut over every two-way split with both sides non-empty.
inline double ExhaustiveMinNcut(const WeightedGraph& graph) {
  const std::size_t n = graph.size();
  double best = std::numeric_limits<double>::infinity();
  std::vector<bool> in_a(n);
  // Vertex n-1 always on side B, which enumerates each split once.
  for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << (n - 1)); ++mask) {
    for (std::size_t v = 0; v < n; ++v) in_a[v] = (mask >> v) & 1;
    best = std::min(best, NcutValue(graph, in_a));
  }
  return best;
}

// Connected random graph: a random spanning tree plus edges with probability p.
inline WeightedGraph RandomConnectedGraph(Philox& rng, std::size_t n, double p) {
  WeightedGraph g;
  g.adjacency.resize(n);
  std::vector<std::vector<bool>> has(n, std::vector<bool>(n, false));
  for (std::size_t v = 1; v < n; ++v) {
    const std::size_t u = rng.UniformInt(v);
    g.AddEdge(u, v, rng.Uniform(0.05, 1.0));
    has[u][v] = has[v][u] = true;
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (!has[a][b] && rng.Uniform() < p) g.AddEdge(a, b, rng.Uniform(0.05, 1.0));
    }
  }
  return g;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("pairforge_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace pairforge::testing
