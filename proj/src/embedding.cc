#include "pairforge/embedding.h"

#include <charconv>

#include "pairforge/errors.h"

namespace pairforge {

ImageNames::ImageNames(const Reconstruction& recon) : numeric_(false) {
  for (const auto& image : recon.images()) {
    ids_.emplace(image.name, image.id);
    names_.emplace(image.id, image.name);
  }
}

std::optional<ImageId> ImageNames::Find(const std::string& name) const {
  if (!numeric_) {
    const auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  std::uint32_t value = 0;
  const auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), value);
  if (ec != std::errc() || ptr != name.data() + name.size()) return std::nullopt;
  return ImageId(value);
}

ImageId ImageNames::Id(const std::string& name) const {
  if (const auto id = Find(name)) return *id;
  throw ValidationError("unknown image name '" + name + "'");
}

std::string ImageNames::Name(ImageId id) const {
  if (numeric_) return std::to_string(id.value);
  const auto it = names_.find(id);
  if (it == names_.end()) {
    throw ValidationError("no name for image id " + std::to_string(id.value));
  }
  return it->second;
}

Embeddings ToEmbeddings(const DescriptorSet& set, const ImageNames& names) {
  Embeddings out;
  for (const auto& e : set.entries()) {
    out[names.Id(e.name)] =
        Eigen::Map<const Eigen::VectorXd>(e.vector.data(), static_cast<Eigen::Index>(e.vector.size()));
  }
  return out;
}

DescriptorSet ToDescriptorSet(const Embeddings& embeddings, const ImageNames& names) {
  if (embeddings.empty()) return DescriptorSet(1);
  DescriptorSet set(static_cast<std::size_t>(embeddings.begin()->second.size()));
  for (const auto& [id, v] : embeddings) {
    set.Add(names.Name(id), std::vector<double>(v.data(), v.data() + v.size()));
  }
  return set;
}

}  // namespace pairforge
