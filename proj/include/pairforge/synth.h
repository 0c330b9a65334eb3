#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pairforge/model.h"
#include "pairforge/retrieval.h"

namespace pairforge {

struct SynthConfig {
  std::size_t scenes = 3;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  double overlap_fraction = 0.5;  // shared fraction of neighboring footprints
  // Points per unit area of every atomic cell seen by two or more cameras;
  // each such cell gets max(1, round(points_per_cell * area)) points.
  double points_per_cell = 60;
  std::size_t descriptor_dim = 32;
  std::size_t map_channels = 16;
  std::size_t map_rows = 4;
  std::size_t map_cols = 6;
  double noise_sigma = 0.1;
  double nuisance_sigma = 1.0;  // spread of descriptor dimensions unrelated to location
  std::uint64_t seed = 0;

  void Validate() const;
};

inline constexpr double kFootprintWidth = 1.5;
inline constexpr double kFootprintHeight = 1.0;
inline constexpr std::uint32_t kSynthWidthPx = 1500;
inline constexpr std::uint32_t kSynthHeightPx = 1000;

// Axis-aligned nadir footprint in scene coordinates.
struct Footprint {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double Area() const { return (x1 - x0) * (y1 - y0); }
  bool Contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

double IntersectionArea(const Footprint& a, const Footprint& b);

struct SynthOutput {
  Reconstruction recon;
  MatchSet matches;
  std::map<ImageId, FeatureMap> maps;
  DescriptorSet descriptors;  // base descriptors, keyed by image name
  std::map<ImageId, Footprint> footprints;
  // Closed-form geometric similarity from the cell layout, and footprint
  // intersection areas, for every same-scene pair with a positive area.
  std::map<ImagePair, std::uint32_t> gs;
  std::map<ImagePair, double> overlap_area;

  GroundTruth Truth(std::size_t inlier_threshold = kDefaultInlierThreshold) const;
};

SynthOutput Generate(const SynthConfig& config);

// Name of the image at (row, col) of a scene.
std::string SynthImageName(std::size_t scene, std::size_t row, std::size_t col);

// recon.txt, matches.txt, maps/<name>.fmap, descriptors.dvec (+ .names) and
// overlap.txt (`<name> <name> <area> <gs>` lines) under dir.
void WriteSynthOutput(const std::string& dir, const SynthOutput& out);

}  // namespace pairforge
