#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pairforge/ids.h"

namespace pairforge {

struct SceneRecord {
  SceneId id;
  std::string name;
  friend bool operator==(const SceneRecord&, const SceneRecord&) = default;
};

struct ImageRecord {
  ImageId id;
  SceneId scene;
  std::string name;
  std::uint32_t width_px = 0;
  std::uint32_t height_px = 0;

  double Area() const {
    return static_cast<double>(width_px) * static_cast<double>(height_px);
  }
  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct TrackElement {
  ImageId image;
  std::uint32_t keypoint = 0;
  friend bool operator==(const TrackElement&, const TrackElement&) = default;
};

struct Point3D {
  PointId id;
  std::array<double, 3> position{};
  std::vector<TrackElement> track;
  friend bool operator==(const Point3D&, const Point3D&) = default;
};

// Scenes, registered images and triangulated points. Construction validates
// every invariant; instances are immutable afterwards.
class Reconstruction {
 public:
  Reconstruction() = default;
  // Throws ValidationError naming the first violated invariant.
  Reconstruction(std::vector<SceneRecord> scenes,
                 std::vector<ImageRecord> images,
                 std::vector<Point3D> points);

  const std::vector<SceneRecord>& scenes() const { return scenes_; }
  const std::vector<ImageRecord>& images() const { return images_; }
  const std::vector<Point3D>& points() const { return points_; }

  const ImageRecord* FindImage(ImageId id) const;
  const ImageRecord* FindImageByName(const std::string& name) const;
  const ImageRecord& Image(ImageId id) const;
  SceneId SceneOf(ImageId id) const { return Image(id).scene; }

  std::unordered_map<ImageId, SceneId> SceneMap() const;

  friend bool operator==(const Reconstruction& a, const Reconstruction& b) {
    return a.scenes_ == b.scenes_ && a.images_ == b.images_ &&
           a.points_ == b.points_;
  }

 private:
  std::vector<SceneRecord> scenes_;
  std::vector<ImageRecord> images_;
  std::vector<Point3D> points_;
  std::unordered_map<ImageId, std::size_t> image_index_;
  std::unordered_map<std::string, std::size_t> name_index_;
};

struct Correspondence {
  double xi = 0, yi = 0, xj = 0, yj = 0;
  friend bool operator==(const Correspondence&,
                         const Correspondence&) = default;
};

// Verified matches of one unordered image pair. Coordinates are ordered as
// (pair.first, pair.second).
struct PairMatches {
  ImagePair pair;
  std::vector<Correspondence> inliers;

  std::size_t num_inliers() const { return inliers.size(); }
  friend bool operator==(const PairMatches&, const PairMatches&) = default;
};

struct MatchSet {
  std::vector<PairMatches> pairs;

  const PairMatches* Find(ImagePair pair) const;
  friend bool operator==(const MatchSet&, const MatchSet&) = default;
};

// Checks pair references and that every coordinate lies inside its image.
void ValidateMatches(const MatchSet& matches, const Reconstruction& recon);

// Dense D x H x W activation grid, channel-major: (d * H + h) * W + w.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t channels, std::size_t rows, std::size_t cols);
  FeatureMap(std::size_t channels, std::size_t rows, std::size_t cols,
             std::vector<double> values);

  std::size_t channels() const { return channels_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t pixels() const { return rows_ * cols_; }
  std::size_t size() const { return values_.size(); }

  double& at(std::size_t d, std::size_t h, std::size_t w) {
    return values_[(d * rows_ + h) * cols_ + w];
  }
  double at(std::size_t d, std::size_t h, std::size_t w) const {
    return values_[(d * rows_ + h) * cols_ + w];
  }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct DescriptorEntry {
  std::string name;
  std::vector<double> vector;
  friend bool operator==(const DescriptorEntry&,
                         const DescriptorEntry&) = default;
};

class DescriptorSet {
 public:
  explicit DescriptorSet(std::size_t dim = 1);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<DescriptorEntry>& entries() const { return entries_; }
  const DescriptorEntry& operator[](std::size_t i) const { return entries_[i]; }

  // Throws DimensionError / ValidationError on length mismatch, non-finite
  // values or a duplicate name.
  void Add(std::string name, std::vector<double> vector);
  std::optional<std::size_t> IndexOf(const std::string& name) const;

  friend bool operator==(const DescriptorSet& a, const DescriptorSet& b) {
    return a.dim_ == b.dim_ && a.entries_ == b.entries_;
  }

 private:
  std::size_t dim_;
  std::vector<DescriptorEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace pairforge
