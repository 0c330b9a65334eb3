#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <utility>

namespace pairforge {

// Opaque non-negative identifier, distinct per domain concept.
template <typename Tag>
struct Id {
  std::uint32_t value = 0;

  constexpr Id() = default;
  constexpr explicit Id(std::uint32_t v) : value(v) {}

  friend constexpr auto operator<=>(Id, Id) = default;
  friend std::ostream& operator<<(std::ostream& os, Id id) {
    return os << id.value;
  }
};

using SceneId = Id<struct SceneTag>;
using ImageId = Id<struct ImageTag>;
using PointId = Id<struct PointTag>;

// Unordered image pair stored as (min id, max id).
struct ImagePair {
  ImageId first;
  ImageId second;

  constexpr ImagePair() = default;
  constexpr ImagePair(ImageId a, ImageId b)
      : first(a < b ? a : b), second(a < b ? b : a) {}

  constexpr std::uint64_t Key() const {
    return (static_cast<std::uint64_t>(first.value) << 32) | second.value;
  }
  static constexpr ImagePair FromKey(std::uint64_t key) {
    return ImagePair(ImageId(static_cast<std::uint32_t>(key >> 32)),
                     ImageId(static_cast<std::uint32_t>(key & 0xffffffffu)));
  }

  friend constexpr auto operator<=>(const ImagePair&,
                                    const ImagePair&) = default;
};

}  // namespace pairforge

template <typename Tag>
struct std::hash<pairforge::Id<Tag>> {
  std::size_t operator()(pairforge::Id<Tag> id) const noexcept {
    return std::hash<std::uint32_t>()(id.value);
  }
};

template <>
struct std::hash<pairforge::ImagePair> {
  std::size_t operator()(const pairforge::ImagePair& p) const noexcept {
    return std::hash<std::uint64_t>()(p.Key());
  }
};
