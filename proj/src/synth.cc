#include "pairforge/synth.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <Eigen/QR>

#include "pairforge/errors.h"
#include "pairforge/io.h"
#include "pairforge/random.h"
#include "pairforge/text.h"

namespace pairforge {

void SynthConfig::Validate() const {
  if (!(overlap_fraction > 0 && overlap_fraction < 1)) {
    throw ValidationError("overlap fraction must lie strictly between 0 and 1");
  }
  if (scenes == 0 || grid_rows == 0 || grid_cols == 0 || descriptor_dim == 0 ||
      map_channels == 0 || map_rows == 0 || map_cols == 0) {
    throw ValidationError("synthetic counts must be positive");
  }
  if (!(points_per_cell > 0)) throw ValidationError("points per cell must be positive");
  if (!(noise_sigma >= 0) || !(nuisance_sigma >= 0)) {
    throw ValidationError("noise levels must be >= 0");
  }
}

double IntersectionArea(const Footprint& a, const Footprint& b) {
  const double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return w > 0 && h > 0 ? w * h : 0.0;
}

std::string SynthImageName(std::size_t scene, std::size_t row, std::size_t col) {
  return "s" + std::to_string(scene) + "_r" + std::to_string(row) + "_c" + std::to_string(col);
}

GroundTruth SynthOutput::Truth(std::size_t inlier_threshold) const {
  return GroundTruth::FromMatches(matches, ImageNames(recon), inlier_threshold);
}

namespace {

double Softplus(double z) { return z > 30 ? z : std::log1p(std::exp(z)); }

std::vector<double> Breakpoints(const std::vector<Footprint>& fps, bool x_axis) {
  std::vector<double> v;
  for (const auto& f : fps) {
    v.push_back(x_axis ? f.x0 : f.y0);
    v.push_back(x_axis ? f.x1 : f.y1);
  }
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Per-scene smooth latent field over the ground plane.
struct LatentField {
  std::vector<std::array<double, 2>> centers;
  Eigen::MatrixXd amplitude;  // channels x bumps
  Eigen::VectorXd bias;

  double Value(std::size_t channel, double x, double y) const {
    double z = bias[static_cast<Eigen::Index>(channel)];
    for (std::size_t b = 0; b < centers.size(); ++b) {
      const double dx = x - centers[b][0], dy = y - centers[b][1];
      z += amplitude(static_cast<Eigen::Index>(channel), static_cast<Eigen::Index>(b)) *
           std::exp(-(dx * dx + dy * dy) / 0.5);
    }
    return z;
  }
};

}  // namespace

SynthOutput Generate(const SynthConfig& config) {
  config.Validate();
  Philox rng(config.seed);
  const double sx = kFootprintWidth * (1 - config.overlap_fraction);
  const double sy = kFootprintHeight * (1 - config.overlap_fraction);
  const double extent_x = sx * static_cast<double>(config.grid_cols - 1) + kFootprintWidth;
  const double extent_y = sy * static_cast<double>(config.grid_rows - 1) + kFootprintHeight;

  SynthOutput out;
  std::vector<SceneRecord> scenes;
  std::vector<ImageRecord> images;
  std::vector<Point3D> points;
  std::map<ImageId, std::uint32_t> next_keypoint;
  struct Observation {
    double x, y;
  };
  std::vector<Observation> point_xy;

  for (std::size_t s = 0; s < config.scenes; ++s) {
    const SceneId scene(static_cast<std::uint32_t>(s));
    scenes.push_back({scene, "scene" + std::to_string(s)});
    std::vector<Footprint> fps;
    std::vector<ImageId> ids;
    for (std::size_t r = 0; r < config.grid_rows; ++r) {
      for (std::size_t c = 0; c < config.grid_cols; ++c) {
        const ImageId id(static_cast<std::uint32_t>(images.size()));
        const Footprint f{static_cast<double>(c) * sx, static_cast<double>(r) * sy,
                          static_cast<double>(c) * sx + kFootprintWidth,
                          static_cast<double>(r) * sy + kFootprintHeight};
        images.push_back({id, scene, SynthImageName(s, r, c), kSynthWidthPx, kSynthHeightPx});
        fps.push_back(f);
        ids.push_back(id);
        out.footprints.emplace(id, f);
      }
    }
    for (std::size_t i = 0; i < fps.size(); ++i) {
      for (std::size_t j = i + 1; j < fps.size(); ++j) {
        const double area = IntersectionArea(fps[i], fps[j]);
        if (area > 0) out.overlap_area[ImagePair(ids[i], ids[j])] = area;
      }
    }

    // Atomic cells between footprint edges; every cell lies in a fixed set of
    // footprints, which is the track of each point placed in it.
    const auto xs = Breakpoints(fps, true);
    const auto ys = Breakpoints(fps, false);
    for (std::size_t a = 0; a + 1 < xs.size(); ++a) {
      for (std::size_t b = 0; b + 1 < ys.size(); ++b) {
        const double cx = 0.5 * (xs[a] + xs[a + 1]), cy = 0.5 * (ys[b] + ys[b + 1]);
        std::vector<std::size_t> cover;
        for (std::size_t i = 0; i < fps.size(); ++i) {
          if (fps[i].Contains(cx, cy)) cover.push_back(i);
        }
        if (cover.size() < 2) continue;
        const double area = (xs[a + 1] - xs[a]) * (ys[b + 1] - ys[b]);
        const auto count = static_cast<std::uint32_t>(
            std::max(1.0, std::round(config.points_per_cell * area)));
        for (std::size_t i = 0; i < cover.size(); ++i) {
          for (std::size_t j = i + 1; j < cover.size(); ++j) {
            out.gs[ImagePair(ids[cover[i]], ids[cover[j]])] += count;
          }
        }
        for (std::uint32_t p = 0; p < count; ++p) {
          // Strictly inside the cell so containment is unambiguous.
          const double x = xs[a] + (xs[a + 1] - xs[a]) * rng.Uniform(0.05, 0.95);
          const double y = ys[b] + (ys[b + 1] - ys[b]) * rng.Uniform(0.05, 0.95);
          Point3D point;
          point.id = PointId(static_cast<std::uint32_t>(points.size()));
          point.position = {x, y, 0.0};
          for (std::size_t i : cover) {
            point.track.push_back({ids[i], next_keypoint[ids[i]]++});
          }
          points.push_back(std::move(point));
          point_xy.push_back({x, y});
        }
      }
    }
  }
  out.recon = Reconstruction(scenes, images, points);

  // Matches: a jittered 80% of the shared points, as pixel correspondences.
  std::map<ImagePair, std::vector<std::size_t>> shared;
  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto& track = points[p].track;
    for (std::size_t i = 0; i < track.size(); ++i) {
      for (std::size_t j = i + 1; j < track.size(); ++j) {
        shared[ImagePair(track[i].image, track[j].image)].push_back(p);
      }
    }
  }
  auto pixel = [&](ImageId id, const Observation& o) {
    const Footprint& f = out.footprints.at(id);
    return std::array<double, 2>{(o.x - f.x0) / kFootprintWidth * kSynthWidthPx,
                                 (o.y - f.y0) / kFootprintHeight * kSynthHeightPx};
  };
  for (const auto& [pair, members] : shared) {
    const double jitter = rng.Uniform(-0.1, 0.1);
    const auto n = static_cast<std::size_t>(
        std::max(0.0, std::round(static_cast<double>(members.size()) * 0.8 * (1 + jitter))));
    if (n == 0) continue;
    auto picks = rng.SampleWithoutReplacement(members.size(), std::min(n, members.size()));
    std::sort(picks.begin(), picks.end());
    PairMatches m;
    m.pair = pair;
    for (std::size_t k : picks) {
      const auto& o = point_xy[members[k]];
      const auto a = pixel(pair.first, o), b = pixel(pair.second, o);
      m.inliers.push_back({a[0], a[1], b[0], b[1]});
    }
    out.matches.pairs.push_back(std::move(m));
  }

  // Feature maps sampled from a per-scene latent field at the pixel's ground
  // position, kept positive through a softplus.
  std::vector<LatentField> fields(config.scenes);
  const std::size_t bumps = 8;
  for (auto& field : fields) {
    for (std::size_t b = 0; b < bumps; ++b) {
      field.centers.push_back({rng.Uniform(0, extent_x), rng.Uniform(0, extent_y)});
    }
    field.amplitude.resize(static_cast<Eigen::Index>(config.map_channels),
                           static_cast<Eigen::Index>(bumps));
    for (Eigen::Index i = 0; i < field.amplitude.size(); ++i) field.amplitude(i) = 2 * rng.Normal();
    field.bias.resize(static_cast<Eigen::Index>(config.map_channels));
    for (Eigen::Index i = 0; i < field.bias.size(); ++i) field.bias[i] = rng.Normal();
  }
  for (const auto& image : out.recon.images()) {
    const Footprint& f = out.footprints.at(image.id);
    const LatentField& field = fields[image.scene.value];
    FeatureMap map(config.map_channels, config.map_rows, config.map_cols);
    for (std::size_t d = 0; d < config.map_channels; ++d) {
      for (std::size_t h = 0; h < config.map_rows; ++h) {
        for (std::size_t w = 0; w < config.map_cols; ++w) {
          const double x = f.x0 + (static_cast<double>(w) + 0.5) /
                                      static_cast<double>(config.map_cols) * kFootprintWidth;
          const double y = f.y0 + (static_cast<double>(h) + 0.5) /
                                      static_cast<double>(config.map_rows) * kFootprintHeight;
          map.at(d, h, w) = Softplus(field.Value(d, x, y) + config.noise_sigma * rng.Normal());
        }
      }
    }
    out.maps.emplace(image.id, std::move(map));
  }

  // Base descriptors: scene code and location code in a few dimensions,
  // nuisance in the rest, then a fixed random rotation mixing them.
  const auto dim = static_cast<Eigen::Index>(config.descriptor_dim);
  const Eigen::Index scene_dims = std::min<Eigen::Index>(4, dim);
  const Eigen::Index loc_dims = std::min<Eigen::Index>(4, dim - scene_dims);
  std::vector<Eigen::VectorXd> scene_codes(config.scenes);
  for (auto& code : scene_codes) {
    code.resize(scene_dims);
    for (Eigen::Index i = 0; i < scene_dims; ++i) code[i] = rng.Normal();
  }
  Eigen::MatrixXd gaussian(dim, dim);
  for (Eigen::Index i = 0; i < gaussian.size(); ++i) gaussian(i) = rng.Normal();
  const Eigen::MatrixXd rotation = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian).householderQ();
  out.descriptors = DescriptorSet(config.descriptor_dim);
  for (const auto& image : out.recon.images()) {
    const Footprint& f = out.footprints.at(image.id);
    const double u = 0.5 * (f.x0 + f.x1) / sx, v = 0.5 * (f.y0 + f.y1) / sy;
    const double loc[4] = {0.5 * u, 0.5 * v, std::sin(u), std::cos(v)};
    Eigen::VectorXd z(dim);
    for (Eigen::Index i = 0; i < scene_dims; ++i) {
      z[i] = scene_codes[image.scene.value][i] + config.noise_sigma * rng.Normal();
    }
    for (Eigen::Index i = 0; i < loc_dims; ++i) {
      z[scene_dims + i] = loc[i] + config.noise_sigma * rng.Normal();
    }
    for (Eigen::Index i = scene_dims + loc_dims; i < dim; ++i) {
      z[i] = config.nuisance_sigma * rng.Normal();
    }
    const Eigen::VectorXd mixed = rotation * z;
    out.descriptors.Add(image.name, std::vector<double>(mixed.data(), mixed.data() + dim));
  }
  return out;
}

void WriteSynthOutput(const std::string& dir, const SynthOutput& out) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "maps");
  WriteReconstructionFile((fs::path(dir) / "recon.txt").string(), out.recon);
  WriteMatchesFile((fs::path(dir) / "matches.txt").string(), out.matches);
  for (const auto& [id, map] : out.maps) {
    WriteFeatureMapFile((fs::path(dir) / "maps" / (out.recon.Image(id).name + ".fmap")).string(),
                        map);
  }
  WriteDescriptorFile((fs::path(dir) / "descriptors.dvec").string(), out.descriptors);
  std::ostringstream overlap;
  overlap << "# <image> <image> <footprint intersection area> <gs>\n";
  for (const auto& [pair, area] : out.overlap_area) {
    const auto it = out.gs.find(pair);
    overlap << out.recon.Image(pair.first).name << ' ' << out.recon.Image(pair.second).name << ' '
            << text::FormatReal(area) << ' ' << (it == out.gs.end() ? 0 : it->second) << '\n';
  }
  text::WriteFile((fs::path(dir) / "overlap.txt").string(), overlap.str());
}

}  // namespace pairforge
