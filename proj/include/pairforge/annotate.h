#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pairforge/model.h"

namespace pairforge {

// Geometric similarity GS(a, b): the number of 3D points observed by both
// images. Only same-scene pairs with GS >= 1 are stored; self-queries return
// the image's observation count.
class CovisibilityTable {
 public:
  std::uint32_t Get(ImageId a, ImageId b) const;
  std::uint32_t Observations(ImageId image) const;

  std::size_t size() const { return counts_.size(); }
  const std::unordered_map<ImagePair, std::uint32_t>& counts() const {
    return counts_;
  }
  std::vector<std::pair<ImagePair, std::uint32_t>> SortedEntries() const;

  void Add(ImagePair pair, std::uint32_t count) { counts_[pair] += count; }
  void AddObservations(ImageId image, std::uint32_t count) {
    observations_[image] += count;
  }

 private:
  std::unordered_map<ImagePair, std::uint32_t> counts_;
  std::unordered_map<ImageId, std::uint32_t> observations_;
};

// Inverts every track, incrementing all C(len, 2) same-scene pairs. With
// num_threads > 1 points are split across workers and partial tables merged.
CovisibilityTable BuildCovisibility(const Reconstruction& recon,
                                    unsigned num_threads = 1);

struct PositiveEntry {
  ImageId image;
  std::uint32_t gs = 0;
  friend bool operator==(const PositiveEntry&, const PositiveEntry&) = default;
};
using PositiveList = std::vector<PositiveEntry>;

// Per-query positives (GS > epsilon, same scene), sorted by GS descending
// with ties broken by ascending image id. Every registered image has a list,
// possibly empty.
struct PositiveLists {
  std::map<ImageId, PositiveList> lists;
  std::map<ImageId, SceneId> scene_of;

  friend bool operator==(const PositiveLists&, const PositiveLists&) = default;
};

inline constexpr std::uint32_t kDefaultEpsilon = 32;

PositiveLists BuildPositiveLists(const CovisibilityTable& table,
                                 const Reconstruction& recon,
                                 std::uint32_t epsilon);

struct ReconstructionSummary {
  std::size_t registered_images = 0;
  std::size_t points = 0;
  friend bool operator==(const ReconstructionSummary&,
                         const ReconstructionSummary&) = default;
};
ReconstructionSummary Summarize(const Reconstruction& recon);

// `POSLIST <query_id> <scene_id>` followed by `<image_id> <gs>` lines. The
// scene field is optional when parsing.
std::string WritePositiveLists(const PositiveLists& lists);
PositiveLists ParsePositiveLists(std::string_view content);

}  // namespace pairforge
