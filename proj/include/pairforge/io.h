#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "pairforge/model.h"

namespace pairforge {

// Reconstruction text format, one record per line:
//   SCENE <scene_id> <name>
//   IMAGE <image_id> <scene_id> <name> <width_px> <height_px>
//   POINT3D <point_id> <x> <y> <z> TRACK <image_id>:<kp_idx> ...
// Records may appear in any order; references are resolved at the end and
// reported at the location of the referencing token.
Reconstruction ParseReconstruction(std::string_view content);
std::string WriteReconstruction(const Reconstruction& recon);

// Matches text format: `PAIR <i> <j> <n>` followed by n lines
// `<xi> <yi> <xj> <yj>`. Pairs are canonicalized to (min, max) on parse,
// swapping the coordinate columns when needed.
MatchSet ParseMatches(std::string_view content);
std::string WriteMatches(const MatchSet& matches);

// FMAP binary: magic, u32 version, u32 D, H, W, then D*H*W little-endian
// f32 values, channel-major.
inline constexpr std::uint32_t kFormatVersion = 1;
FeatureMap ParseFeatureMap(std::string_view bytes);
std::string WriteFeatureMap(const FeatureMap& map);

// DVEC binary: magic, u32 version, u32 count, u32 dim, then count*dim f32.
// Names live in a sidecar text file, one per line, in entry order.
DescriptorSet ParseDescriptors(std::string_view bytes, std::string_view names);
struct DescriptorFiles {
  std::string bytes;
  std::string names;
};
DescriptorFiles WriteDescriptors(const DescriptorSet& set);

// File helpers. Descriptor names go to `<path>.names`.
Reconstruction ReadReconstructionFile(const std::string& path);
MatchSet ReadMatchesFile(const std::string& path);
FeatureMap ReadFeatureMapFile(const std::string& path);
DescriptorSet ReadDescriptorFile(const std::string& path);
void WriteReconstructionFile(const std::string& path, const Reconstruction& recon);
void WriteMatchesFile(const std::string& path, const MatchSet& matches);
void WriteFeatureMapFile(const std::string& path, const FeatureMap& map);
void WriteDescriptorFile(const std::string& path, const DescriptorSet& set);

namespace binary {

void PutU32(std::string* out, std::uint32_t v);
void PutF32(std::string* out, float v);
void PutU64(std::string* out, std::uint64_t v);
void PutF64(std::string* out, double v);

// Bounds-checked little-endian reader; throws FormatError(kTruncated).
class Reader {
 public:
  Reader(std::string_view bytes, std::string_view what)
      : bytes_(bytes), what_(what) {}

  std::string_view Take(std::size_t n);
  std::uint32_t U32();
  std::uint64_t U64();
  float F32();
  double F64();
  std::size_t remaining() const { return bytes_.size() - offset_; }
  std::size_t offset() const { return offset_; }

 private:
  std::string_view bytes_;
  std::string_view what_;
  std::size_t offset_ = 0;
};

}  // namespace binary
}  // namespace pairforge
