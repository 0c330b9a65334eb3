#include "pairforge/annotate.h"

#include <algorithm>
#include <sstream>
#include <thread>

#include "pairforge/errors.h"
#include "pairforge/text.h"

namespace pairforge {

std::uint32_t CovisibilityTable::Get(ImageId a, ImageId b) const {
  if (a == b) return Observations(a);
  const auto it = counts_.find(ImagePair(a, b));
  return it == counts_.end() ? 0 : it->second;
}

std::uint32_t CovisibilityTable::Observations(ImageId image) const {
  const auto it = observations_.find(image);
  return it == observations_.end() ? 0 : it->second;
}

std::vector<std::pair<ImagePair, std::uint32_t>> CovisibilityTable::SortedEntries() const {
  std::vector<std::pair<ImagePair, std::uint32_t>> out(counts_.begin(), counts_.end());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void AccumulatePoints(const Reconstruction& recon,
                      const std::unordered_map<ImageId, SceneId>& scene_of,
                      std::size_t begin, std::size_t end, CovisibilityTable* table) {
  const auto& points = recon.points();
  for (std::size_t p = begin; p < end; ++p) {
    const auto& track = points[p].track;
    for (std::size_t i = 0; i < track.size(); ++i) {
      table->AddObservations(track[i].image, 1);
      const SceneId scene = scene_of.at(track[i].image);
      for (std::size_t j = i + 1; j < track.size(); ++j) {
        if (scene_of.at(track[j].image) != scene) continue;
        table->Add(ImagePair(track[i].image, track[j].image), 1);
      }
    }
  }
}

}  // namespace

CovisibilityTable BuildCovisibility(const Reconstruction& recon, unsigned num_threads) {
  const auto scene_of = recon.SceneMap();
  const std::size_t n = recon.points().size();
  num_threads = std::max(1u, std::min<unsigned>(num_threads, static_cast<unsigned>(n / 1024 + 1)));
  if (num_threads == 1) {
    CovisibilityTable table;
    AccumulatePoints(recon, scene_of, 0, n, &table);
    return table;
  }
  std::vector<CovisibilityTable> partial(num_threads);
  std::vector<std::thread> workers;
  for (unsigned t = 0; t < num_threads; ++t) {
    workers.emplace_back(AccumulatePoints, std::cref(recon), std::cref(scene_of),
                         n * t / num_threads, n * (t + 1) / num_threads, &partial[t]);
  }
  for (auto& w : workers) w.join();
  CovisibilityTable merged = std::move(partial[0]);
  for (unsigned t = 1; t < num_threads; ++t) {
    for (const auto& [pair, count] : partial[t].counts()) merged.Add(pair, count);
    for (const auto& image : recon.images()) {
      if (const auto c = partial[t].Observations(image.id)) merged.AddObservations(image.id, c);
    }
  }
  return merged;
}

PositiveLists BuildPositiveLists(const CovisibilityTable& table, const Reconstruction& recon,
                                 std::uint32_t epsilon) {
  PositiveLists out;
  for (const auto& image : recon.images()) {
    out.lists[image.id];
    out.scene_of[image.id] = image.scene;
  }
  for (const auto& [pair, gs] : table.counts()) {
    if (gs <= epsilon) continue;
    out.lists[pair.first].push_back({pair.second, gs});
    out.lists[pair.second].push_back({pair.first, gs});
  }
  for (auto& [query, list] : out.lists) {
    std::sort(list.begin(), list.end(), [](const PositiveEntry& a, const PositiveEntry& b) {
      return a.gs != b.gs ? a.gs > b.gs : a.image < b.image;
    });
  }
  return out;
}

ReconstructionSummary Summarize(const Reconstruction& recon) {
  return {recon.images().size(), recon.points().size()};
}

std::string WritePositiveLists(const PositiveLists& lists) {
  std::ostringstream out;
  out << "# POSLIST <query_id> <scene_id>, then <image_id> <gs> lines\n";
  for (const auto& [query, list] : lists.lists) {
    out << "POSLIST " << query;
    if (const auto it = lists.scene_of.find(query); it != lists.scene_of.end()) {
      out << ' ' << it->second;
    }
    out << '\n';
    for (const auto& e : list) out << e.image << ' ' << e.gs << '\n';
  }
  return out.str();
}

PositiveLists ParsePositiveLists(std::string_view content) {
  PositiveLists out;
  PositiveList* current = nullptr;
  for (const auto& line : text::SplitLines(content)) {
    if (line.tokens[0].text == "POSLIST") {
      line.Expect(2, "POSLIST <query_id> [<scene_id>]");
      if (line.tokens.size() > 3) line.Fail(3, "unexpected trailing field");
      const ImageId query(line.U32(1));
      if (out.lists.count(query)) {
        line.Fail(1, "duplicate POSLIST for image " + std::to_string(query.value));
      }
      current = &out.lists[query];
      if (line.tokens.size() == 3) out.scene_of[query] = SceneId(line.U32(2));
    } else {
      if (current == nullptr) line.Fail(0, "entry before any POSLIST header");
      line.Expect(2, "<image_id> <gs>");
      if (line.tokens.size() > 2) line.Fail(2, "unexpected trailing field");
      current->push_back({ImageId(line.U32(0)), line.U32(1)});
    }
  }
  return out;
}

}  // namespace pairforge
