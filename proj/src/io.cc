#include "pairforge/io.h"

#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "pairforge/errors.h"
#include "pairforge/text.h"

namespace pairforge {

namespace binary {

void PutU32(std::string* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutU64(std::string* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void PutF32(std::string* out, float v) { PutU32(out, std::bit_cast<std::uint32_t>(v)); }

void PutF64(std::string* out, double v) { PutU64(out, std::bit_cast<std::uint64_t>(v)); }

std::string_view Reader::Take(std::size_t n) {
  if (n > remaining()) {
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string(what_) + ": truncated at byte " +
                          std::to_string(offset_) + " (need " + std::to_string(n) +
                          ", have " + std::to_string(remaining()) + ")");
  }
  const auto out = bytes_.substr(offset_, n);
  offset_ += n;
  return out;
}

std::uint32_t Reader::U32() {
  const auto b = Take(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
  return v;
}

std::uint64_t Reader::U64() {
  const auto b = Take(8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[i]);
  return v;
}

float Reader::F32() { return std::bit_cast<float>(U32()); }

double Reader::F64() { return std::bit_cast<double>(U64()); }

}  // namespace binary

namespace {

constexpr std::string_view kFeatureMapMagic = "FMAP";
constexpr std::string_view kDescriptorMagic = "DVEC";

void CheckMagic(binary::Reader* reader, std::string_view magic, std::string_view what) {
  if (reader->remaining() < magic.size()) {
    throw FormatError(FormatError::Kind::kTruncated,
                      std::string(what) + ": file shorter than its magic number");
  }
  const auto got = reader->Take(magic.size());
  if (got != magic) {
    throw FormatError(FormatError::Kind::kMagic,
                      std::string(what) + ": bad magic number (expected '" +
                          std::string(magic) + "')");
  }
  const std::uint32_t version = reader->U32();
  if (version != kFormatVersion) {
    throw FormatError(FormatError::Kind::kVersion,
                      std::string(what) + ": unsupported version " +
                          std::to_string(version));
  }
}

float ToF32(double v, std::string_view what) {
  const float f = static_cast<float>(v);
  if (!std::isfinite(f)) {
    throw FormatError(FormatError::Kind::kValue,
                      std::string(what) + ": value not representable as f32");
  }
  return f;
}

struct PendingTrack {
  ImageId image;
  const text::Line* line;
  std::size_t token;
};

}  // namespace

Reconstruction ParseReconstruction(std::string_view content) {
  const auto lines = text::SplitLines(content);
  std::vector<SceneRecord> scenes;
  std::vector<ImageRecord> images;
  std::vector<Point3D> points;
  std::unordered_set<SceneId> scene_ids;
  std::unordered_map<ImageId, const text::Line*> image_lines;
  std::unordered_set<std::string> image_names;
  std::unordered_set<PointId> point_ids;
  std::vector<PendingTrack> pending;

  for (const auto& line : lines) {
    const auto keyword = line.tokens[0].text;
    if (keyword == "SCENE") {
      line.Expect(3, "SCENE <scene_id> <name>");
      if (line.tokens.size() > 3) line.Fail(3, "unexpected trailing field");
      const SceneId id(line.U32(1));
      if (!scene_ids.insert(id).second) {
        line.Fail(1, "duplicate scene id " + std::to_string(id.value));
      }
      scenes.push_back({id, line.Str(2)});
    } else if (keyword == "IMAGE") {
      line.Expect(6, "IMAGE <image_id> <scene_id> <name> <width_px> <height_px>");
      if (line.tokens.size() > 6) line.Fail(6, "unexpected trailing field");
      ImageRecord image;
      image.id = ImageId(line.U32(1));
      image.scene = SceneId(line.U32(2));
      image.name = line.Str(3);
      image.width_px = line.U32(4);
      image.height_px = line.U32(5);
      if (image.width_px == 0) line.Fail(4, "image width must be positive");
      if (image.height_px == 0) line.Fail(5, "image height must be positive");
      if (!image_lines.emplace(image.id, &line).second) {
        line.Fail(1, "duplicate image id " + std::to_string(image.id.value));
      }
      if (!image_names.insert(image.name).second) {
        line.Fail(3, "duplicate image name " + image.name);
      }
      images.push_back(std::move(image));
    } else if (keyword == "POINT3D") {
      line.Expect(6, "POINT3D <point_id> <x> <y> <z> TRACK ...");
      Point3D point;
      point.id = PointId(line.U32(1));
      if (!point_ids.insert(point.id).second) {
        line.Fail(1, "duplicate point id " + std::to_string(point.id.value));
      }
      point.position = {line.Real(2), line.Real(3), line.Real(4)};
      if (line.tokens[5].text != "TRACK") line.Fail(5, "expected 'TRACK'");
      std::unordered_set<ImageId> seen;
      for (std::size_t t = 6; t < line.tokens.size(); ++t) {
        const auto tok = line.tokens[t].text;
        const auto colon = tok.find(':');
        if (colon == std::string_view::npos) {
          line.Fail(t, "expected <image_id>:<kp_idx>, got '" + std::string(tok) + "'");
        }
        text::Line sub;
        sub.number = line.number;
        sub.tokens = {{tok.substr(0, colon), line.tokens[t].column},
                      {tok.substr(colon + 1), line.tokens[t].column + colon + 1}};
        const TrackElement el{ImageId(sub.U32(0)), sub.U32(1)};
        if (!seen.insert(el.image).second) {
          line.Fail(t, "image " + std::to_string(el.image.value) +
                           " repeated within track");
        }
        point.track.push_back(el);
        pending.push_back({el.image, &line, t});
      }
      if (point.track.size() < 2) line.Fail(line.tokens.size(), "track length must be >= 2");
      points.push_back(std::move(point));
    } else {
      line.Fail(0, "unknown record '" + std::string(keyword) + "'");
    }
  }

  for (const auto& image : images) {
    if (!scene_ids.count(image.scene)) {
      image_lines.at(image.id)->Fail(2, "unknown scene id " +
                                            std::to_string(image.scene.value));
    }
  }
  for (const auto& p : pending) {
    if (!image_lines.count(p.image)) {
      p.line->Fail(p.token, "track references unknown image id " +
                                std::to_string(p.image.value));
    }
  }
  return Reconstruction(std::move(scenes), std::move(images), std::move(points));
}

std::string WriteReconstruction(const Reconstruction& recon) {
  std::ostringstream out;
  out << "# pairforge reconstruction v1\n"
         "# SCENE <scene_id> <name>\n"
         "# IMAGE <image_id> <scene_id> <name> <width_px> <height_px>\n"
         "# POINT3D <point_id> <x> <y> <z> TRACK <image_id>:<kp_idx> ...\n";
  for (const auto& scene : recon.scenes()) {
    out << "SCENE " << scene.id << ' ' << scene.name << '\n';
  }
  for (const auto& image : recon.images()) {
    out << "IMAGE " << image.id << ' ' << image.scene << ' ' << image.name << ' '
        << image.width_px << ' ' << image.height_px << '\n';
  }
  for (const auto& point : recon.points()) {
    out << "POINT3D " << point.id;
    for (double v : point.position) out << ' ' << text::FormatReal(v);
    out << " TRACK";
    for (const auto& el : point.track) out << ' ' << el.image << ':' << el.keypoint;
    out << '\n';
  }
  return out.str();
}

MatchSet ParseMatches(std::string_view content) {
  const auto lines = text::SplitLines(content);
  MatchSet matches;
  std::set<ImagePair> seen;
  std::size_t i = 0;
  while (i < lines.size()) {
    const auto& header = lines[i];
    if (header.tokens[0].text != "PAIR") {
      header.Fail(0, "expected 'PAIR', got '" + std::string(header.tokens[0].text) + "'");
    }
    header.Expect(4, "PAIR <image_id_i> <image_id_j> <n_inliers>");
    if (header.tokens.size() > 4) header.Fail(4, "unexpected trailing field");
    const ImageId a(header.U32(1));
    const ImageId b(header.U32(2));
    const std::uint32_t n = header.U32(3);
    if (a == b) header.Fail(2, "self pair " + std::to_string(a.value));
    const ImagePair pair(a, b);
    if (!seen.insert(pair).second) {
      header.Fail(1, "duplicate pair " + std::to_string(pair.first.value) + " " +
                         std::to_string(pair.second.value));
    }
    const bool swapped = pair.first != a;
    PairMatches pm{pair, {}};
    pm.inliers.reserve(n);
    ++i;
    for (std::uint32_t k = 0; k < n; ++k, ++i) {
      if (i >= lines.size() || lines[i].tokens[0].text == "PAIR") {
        header.Fail(3, "pair declares " + std::to_string(n) + " inliers but only " +
                           std::to_string(k) + " correspondence lines follow");
      }
      const auto& line = lines[i];
      line.Expect(4, "<xi> <yi> <xj> <yj>");
      if (line.tokens.size() > 4) line.Fail(4, "unexpected trailing field");
      Correspondence c{line.Real(0), line.Real(1), line.Real(2), line.Real(3)};
      if (swapped) c = {c.xj, c.yj, c.xi, c.yi};
      pm.inliers.push_back(c);
    }
    matches.pairs.push_back(std::move(pm));
  }
  return matches;
}

std::string WriteMatches(const MatchSet& matches) {
  std::ostringstream out;
  out << "# pairforge matches v1\n"
         "# PAIR <image_id_i> <image_id_j> <n_inliers>, then <xi> <yi> <xj> <yj>\n";
  for (const auto& pm : matches.pairs) {
    out << "PAIR " << pm.pair.first << ' ' << pm.pair.second << ' '
        << pm.num_inliers() << '\n';
    for (const auto& c : pm.inliers) {
      out << text::FormatReal(c.xi) << ' ' << text::FormatReal(c.yi) << ' '
          << text::FormatReal(c.xj) << ' ' << text::FormatReal(c.yj) << '\n';
    }
  }
  return out.str();
}

FeatureMap ParseFeatureMap(std::string_view bytes) {
  binary::Reader reader(bytes, "feature map");
  CheckMagic(&reader, kFeatureMapMagic, "feature map");
  const std::uint64_t d = reader.U32();
  const std::uint64_t h = reader.U32();
  const std::uint64_t w = reader.U32();
  if (d == 0 || h == 0 || w == 0) {
    throw FormatError(FormatError::Kind::kDimension,
                      "feature map: header declares a zero dimension");
  }
  const std::uint64_t count = d * h * w;
  if (reader.remaining() / 4 < count) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "feature map: payload holds " +
                          std::to_string(reader.remaining()) + " bytes, header declares " +
                          std::to_string(count * 4));
  }
  if (reader.remaining() != count * 4) {
    throw FormatError(FormatError::Kind::kDimension,
                      "feature map: " + std::to_string(reader.remaining() - count * 4) +
                          " bytes beyond the declared D*H*W payload");
  }
  std::vector<double> values(count);
  for (auto& v : values) {
    v = reader.F32();
    if (!std::isfinite(v)) {
      throw FormatError(FormatError::Kind::kValue, "feature map: non-finite value");
    }
  }
  return FeatureMap(d, h, w, std::move(values));
}

std::string WriteFeatureMap(const FeatureMap& map) {
  std::string out(kFeatureMapMagic);
  out.reserve(20 + 4 * map.size());
  binary::PutU32(&out, kFormatVersion);
  binary::PutU32(&out, static_cast<std::uint32_t>(map.channels()));
  binary::PutU32(&out, static_cast<std::uint32_t>(map.rows()));
  binary::PutU32(&out, static_cast<std::uint32_t>(map.cols()));
  for (double v : map.values()) binary::PutF32(&out, ToF32(v, "feature map"));
  return out;
}

DescriptorSet ParseDescriptors(std::string_view bytes, std::string_view names) {
  binary::Reader reader(bytes, "descriptors");
  CheckMagic(&reader, kDescriptorMagic, "descriptors");
  const std::uint64_t count = reader.U32();
  const std::uint64_t dim = reader.U32();
  if (dim == 0) {
    throw FormatError(FormatError::Kind::kDimension, "descriptors: zero dimension");
  }
  if (reader.remaining() / 4 < count * dim) {
    throw FormatError(FormatError::Kind::kTruncated,
                      "descriptors: payload holds " + std::to_string(reader.remaining()) +
                          " bytes, header declares " + std::to_string(count * dim * 4));
  }
  if (reader.remaining() != count * dim * 4) {
    throw FormatError(FormatError::Kind::kDimension,
                      "descriptors: payload size disagrees with count*dim");
  }
  std::vector<std::string> name_list;
  for (const auto& line : text::SplitLines(names)) {
    if (line.tokens.size() != 1) line.Fail(1, "expected one name per line");
    name_list.push_back(line.Str(0));
  }
  if (name_list.size() != count) {
    throw FormatError(FormatError::Kind::kDimension,
                      "descriptors: " + std::to_string(name_list.size()) +
                          " names for " + std::to_string(count) + " vectors");
  }
  DescriptorSet set(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::vector<double> v(dim);
    for (auto& x : v) {
      x = reader.F32();
      if (!std::isfinite(x)) {
        throw FormatError(FormatError::Kind::kValue, "descriptors: non-finite value");
      }
    }
    set.Add(std::move(name_list[i]), std::move(v));
  }
  return set;
}

DescriptorFiles WriteDescriptors(const DescriptorSet& set) {
  DescriptorFiles files;
  files.bytes = std::string(kDescriptorMagic);
  binary::PutU32(&files.bytes, kFormatVersion);
  binary::PutU32(&files.bytes, static_cast<std::uint32_t>(set.size()));
  binary::PutU32(&files.bytes, static_cast<std::uint32_t>(set.dim()));
  for (const auto& e : set.entries()) {
    for (double v : e.vector) binary::PutF32(&files.bytes, ToF32(v, "descriptors"));
    files.names += e.name;
    files.names += '\n';
  }
  return files;
}

Reconstruction ReadReconstructionFile(const std::string& path) {
  return ParseReconstruction(text::ReadFile(path));
}

MatchSet ReadMatchesFile(const std::string& path) {
  return ParseMatches(text::ReadFile(path));
}

FeatureMap ReadFeatureMapFile(const std::string& path) {
  return ParseFeatureMap(text::ReadFile(path));
}

DescriptorSet ReadDescriptorFile(const std::string& path) {
  return ParseDescriptors(text::ReadFile(path), text::ReadFile(path + ".names"));
}

void WriteReconstructionFile(const std::string& path, const Reconstruction& recon) {
  text::WriteFile(path, WriteReconstruction(recon));
}

void WriteMatchesFile(const std::string& path, const MatchSet& matches) {
  text::WriteFile(path, WriteMatches(matches));
}

void WriteFeatureMapFile(const std::string& path, const FeatureMap& map) {
  text::WriteFile(path, WriteFeatureMap(map));
}

void WriteDescriptorFile(const std::string& path, const DescriptorSet& set) {
  const auto files = WriteDescriptors(set);
  text::WriteFile(path, files.bytes);
  text::WriteFile(path + ".names", files.names);
}

}  // namespace pairforge
