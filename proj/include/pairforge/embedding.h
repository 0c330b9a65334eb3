#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>

#include <Eigen/Core>

#include "pairforge/model.h"

namespace pairforge {

using Embeddings = std::map<ImageId, Eigen::VectorXd>;

// Bidirectional image name <-> id lookup. Without a reconstruction, names are
// the decimal image ids.
class ImageNames {
 public:
  ImageNames() = default;
  explicit ImageNames(const Reconstruction& recon);

  std::optional<ImageId> Find(const std::string& name) const;
  ImageId Id(const std::string& name) const;  // throws ValidationError
  std::string Name(ImageId id) const;

 private:
  std::unordered_map<std::string, ImageId> ids_;
  std::unordered_map<ImageId, std::string> names_;
  bool numeric_ = true;
};

Embeddings ToEmbeddings(const DescriptorSet& set, const ImageNames& names);
DescriptorSet ToDescriptorSet(const Embeddings& embeddings, const ImageNames& names);

}  // namespace pairforge
