#include "pairforge/model.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_set>

#include "pairforge/errors.h"

namespace pairforge {
namespace {

bool IsToken(const std::string& s) {
  return !s.empty() && std::none_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isspace(c) || c == '#';
  });
}

}  // namespace

Reconstruction::Reconstruction(std::vector<SceneRecord> scenes,
                               std::vector<ImageRecord> images,
                               std::vector<Point3D> points)
    : scenes_(std::move(scenes)),
      images_(std::move(images)),
      points_(std::move(points)) {
  std::unordered_set<SceneId> scene_ids;
  for (const auto& scene : scenes_) {
    if (!scene_ids.insert(scene.id).second) {
      throw ValidationError("duplicate scene id " + std::to_string(scene.id.value));
    }
    if (!IsToken(scene.name)) {
      throw ValidationError("scene " + std::to_string(scene.id.value) +
                            " has an empty or whitespace name");
    }
  }
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto& image = images_[i];
    const std::string label = "image " + std::to_string(image.id.value);
    if (!image_index_.emplace(image.id, i).second) {
      throw ValidationError("duplicate image id " + std::to_string(image.id.value));
    }
    if (!scene_ids.count(image.scene)) {
      throw ValidationError(label + " references unknown scene " +
                            std::to_string(image.scene.value));
    }
    if (image.width_px == 0 || image.height_px == 0) {
      throw ValidationError(label + " has a non-positive size");
    }
    if (!IsToken(image.name)) {
      throw ValidationError(label + " has an empty or whitespace name");
    }
    if (!name_index_.emplace(image.name, i).second) {
      throw ValidationError("duplicate image name " + image.name);
    }
  }
  std::unordered_set<PointId> point_ids;
  for (const auto& point : points_) {
    const std::string label = "point " + std::to_string(point.id.value);
    if (!point_ids.insert(point.id).second) {
      throw ValidationError("duplicate point id " + std::to_string(point.id.value));
    }
    if (!std::all_of(point.position.begin(), point.position.end(),
                     [](double v) { return std::isfinite(v); })) {
      throw ValidationError(label + " has a non-finite position");
    }
    if (point.track.size() < 2) {
      throw ValidationError(label + " has a track shorter than 2");
    }
    std::unordered_set<ImageId> seen;
    for (const auto& el : point.track) {
      if (!image_index_.count(el.image)) {
        throw ValidationError(label + " tracks unknown image " +
                              std::to_string(el.image.value));
      }
      if (!seen.insert(el.image).second) {
        throw ValidationError(label + " repeats image " +
                              std::to_string(el.image.value) + " in its track");
      }
    }
  }
}

const ImageRecord* Reconstruction::FindImage(ImageId id) const {
  const auto it = image_index_.find(id);
  return it == image_index_.end() ? nullptr : &images_[it->second];
}

const ImageRecord* Reconstruction::FindImageByName(const std::string& name) const {
  const auto it = name_index_.find(name);
  return it == name_index_.end() ? nullptr : &images_[it->second];
}

const ImageRecord& Reconstruction::Image(ImageId id) const {
  const ImageRecord* image = FindImage(id);
  if (image == nullptr) {
    throw ValidationError("unknown image id " + std::to_string(id.value));
  }
  return *image;
}

std::unordered_map<ImageId, SceneId> Reconstruction::SceneMap() const {
  std::unordered_map<ImageId, SceneId> out;
  for (const auto& image : images_) out.emplace(image.id, image.scene);
  return out;
}

const PairMatches* MatchSet::Find(ImagePair pair) const {
  for (const auto& pm : pairs) {
    if (pm.pair == pair) return &pm;
  }
  return nullptr;
}

void ValidateMatches(const MatchSet& matches, const Reconstruction& recon) {
  auto inside = [](double x, double y, const ImageRecord& image) {
    return x >= 0 && y >= 0 && x <= image.width_px && y <= image.height_px;
  };
  for (const auto& pm : matches.pairs) {
    const ImageRecord* a = recon.FindImage(pm.pair.first);
    const ImageRecord* b = recon.FindImage(pm.pair.second);
    if (a == nullptr || b == nullptr) {
      throw ValidationError(
          "match pair references unknown image " +
          std::to_string((a == nullptr ? pm.pair.first : pm.pair.second).value));
    }
    for (const auto& c : pm.inliers) {
      if (!inside(c.xi, c.yi, *a) || !inside(c.xj, c.yj, *b)) {
        throw ValidationError("correspondence outside image bounds in pair " +
                              std::to_string(a->id.value) + " " +
                              std::to_string(b->id.value));
      }
    }
  }
}

FeatureMap::FeatureMap(std::size_t channels, std::size_t rows, std::size_t cols)
    : FeatureMap(channels, rows, cols,
                 std::vector<double>(channels * rows * cols, 0.0)) {}

FeatureMap::FeatureMap(std::size_t channels, std::size_t rows, std::size_t cols,
                       std::vector<double> values)
    : channels_(channels), rows_(rows), cols_(cols), values_(std::move(values)) {
  if (channels_ == 0 || rows_ == 0 || cols_ == 0) {
    throw DimensionError("feature map dimensions must be positive");
  }
  if (values_.size() != channels_ * rows_ * cols_) {
    throw DimensionError("feature map holds " + std::to_string(values_.size()) +
                         " values, expected D*H*W = " +
                         std::to_string(channels_ * rows_ * cols_));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw ValidationError("non-finite feature map value");
  }
}

DescriptorSet::DescriptorSet(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw DimensionError("descriptor dimension must be positive");
}

void DescriptorSet::Add(std::string name, std::vector<double> vector) {
  if (vector.size() != dim_) {
    throw DimensionError("descriptor '" + name + "' has length " +
                         std::to_string(vector.size()) + ", expected " +
                         std::to_string(dim_));
  }
  if (!IsToken(name)) {
    throw ValidationError("descriptor name must be a non-empty token");
  }
  for (double v : vector) {
    if (!std::isfinite(v)) {
      throw ValidationError("descriptor '" + name + "' has a non-finite value");
    }
  }
  if (!index_.emplace(name, entries_.size()).second) {
    throw ValidationError("duplicate descriptor name " + name);
  }
  entries_.push_back({std::move(name), std::move(vector)});
}

std::optional<std::size_t> DescriptorSet::IndexOf(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

}  // namespace pairforge
