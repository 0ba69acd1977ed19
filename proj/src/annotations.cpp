#include "stoneseg/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "stoneseg/errors.hpp"

namespace stoneseg {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* field, std::string_view context) {
  if (!obj.is_object() || !obj.contains(field)) {
    throw DataError("annotation schema: missing field '" + std::string(field) + "' in " + std::string(context));
  }
  return obj.at(field);
}

}  // namespace

std::vector<AnnotationDoc> parse_annotations(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError("annotation JSON parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }

  std::vector<AnnotationDoc> docs;
  try {
    const json& images = require(root, "images", "document");
    if (!images.is_array()) throw DataError("annotation schema: field 'images' must be an array");
    for (const json& image : images) {
      AnnotationDoc doc;
      doc.image_name = require(image, "name", "image entry").get<std::string>();
      doc.image_width = require(image, "width", doc.image_name).get<int>();
      doc.image_height = require(image, "height", doc.image_name).get<int>();
      if (doc.image_name.empty()) throw DataError("annotation schema: empty image name");
      if (doc.image_width < 1 || doc.image_height < 1) {
        throw DataError("annotation schema: non-positive size for " + doc.image_name);
      }
      for (const json& ann : require(image, "annotations", doc.image_name)) {
        Polygon poly;
        poly.label = require(ann, "label", doc.image_name).get<std::string>();
        for (const json& pt : require(ann, "points", doc.image_name)) {
          if (!pt.is_array() || pt.size() != 2) {
            throw DataError("annotation schema: point must be [x,y] in " + doc.image_name);
          }
          poly.vertices.push_back({std::clamp(pt[0].get<double>(), 0.0, static_cast<double>(doc.image_width)),
                                   std::clamp(pt[1].get<double>(), 0.0, static_cast<double>(doc.image_height))});
        }
        if (poly.vertices.size() < 3) {
          throw DataError("annotation schema: polygon with fewer than 3 vertices in " + doc.image_name);
        }
        doc.polygons.push_back(std::move(poly));
      }
      docs.push_back(std::move(doc));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("annotation schema: ") + e.what());
  }
  return docs;
}

json annotations_to_json(const std::vector<AnnotationDoc>& docs) {
  json images = json::array();
  for (const AnnotationDoc& doc : docs) {
    json anns = json::array();
    for (const Polygon& poly : doc.polygons) {
      json points = json::array();
      for (const Vertex& v : poly.vertices) points.push_back({v.x, v.y});
      anns.push_back({{"label", poly.label}, {"points", std::move(points)}});
    }
    images.push_back(
        {{"name", doc.image_name}, {"width", doc.image_width}, {"height", doc.image_height}, {"annotations", anns}});
  }
  return {{"images", std::move(images)}};
}

BinaryMask rasterize_polygon(const std::vector<Vertex>& vertices, int width, int height) {
  BinaryMask mask = BinaryMask::Zero(height, width);
  const std::size_t n = vertices.size();
  std::vector<double> crossings;
  for (int row = 0; row < height; ++row) {
    const double y = row + 0.5;
    crossings.clear();
    // An edge counts when y lies in [min(yi,yj), max(yi,yj)); horizontal
    // edges never count.
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Vertex& a = vertices[i];
      const Vertex& b = vertices[j];
      if ((a.y > y) != (b.y > y)) crossings.push_back((b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x);
    }
    if (crossings.empty()) continue;
    std::sort(crossings.begin(), crossings.end());
    // Pixel centre xc is inside when an odd number of crossings lie strictly
    // to its right.
    std::size_t first_greater = 0;
    for (int col = 0; col < width; ++col) {
      const double xc = col + 0.5;
      while (first_greater < crossings.size() && crossings[first_greater] <= xc) ++first_greater;
      if ((crossings.size() - first_greater) % 2 == 1) mask(row, col) = 1;
    }
  }
  return mask;
}

BinaryMask rasterize_polygons(const AnnotationDoc& doc) {
  BinaryMask mask = BinaryMask::Zero(doc.image_height, doc.image_width);
  for (const Polygon& poly : doc.polygons) {
    mask = mask.max(rasterize_polygon(poly.vertices, doc.image_width, doc.image_height));
  }
  return mask;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + std::string(name) + "'");
}

std::vector<DatasetEntry> DatasetIndex::select(Split split) const {
  std::vector<DatasetEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [split](const DatasetEntry& e) { return e.split == split; });
  return out;
}

std::size_t DatasetIndex::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [split](const DatasetEntry& e) { return e.split == split; }));
}

std::string frame_relpath(std::string_view video_id, int frame) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%06d.png", frame);
  return std::string(video_id) + "/" + name;
}

std::string mask_relpath(std::string_view video_id, int frame) {
  char name[32];
  std::snprintf(name, sizeof name, "mask_%06d.png", frame);
  return std::string(video_id) + "/" + name;
}

DatasetIndex split_dataset(const std::vector<VideoInfo>& videos, double fraction, std::int64_t seed,
                           double val_fraction) {
  if (videos.size() < 2) throw DataError("split_dataset: need at least 2 videos to hold one out");
  if (!(fraction >= 0.1 && fraction <= 0.2)) throw ConfigError("split_dataset: test fraction must lie in [0.1, 0.2]");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("split_dataset: val fraction must lie in [0, 1)");

  const auto n = static_cast<long>(videos.size());
  const long n_test = std::max(1L, std::lround(fraction * static_cast<double>(n)));
  const long n_val = val_fraction > 0.0 ? std::max(1L, std::lround(val_fraction * static_cast<double>(n))) : 0L;
  if (n_test + n_val >= n) throw ConfigError("split_dataset: no videos left for training");

  std::vector<std::size_t> order(videos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Split> assigned(videos.size(), Split::train);
  for (long k = 0; k < n_test; ++k) assigned[order[static_cast<std::size_t>(k)]] = Split::test;
  for (long k = n_test; k < n_test + n_val; ++k) assigned[order[static_cast<std::size_t>(k)]] = Split::val;

  DatasetIndex index;
  index.seed = seed;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (int f = 0; f < videos[v].frame_count; ++f) {
      index.entries.push_back(
          {videos[v].video_id, frame_relpath(videos[v].video_id, f), mask_relpath(videos[v].video_id, f), assigned[v]});
    }
  }
  return index;
}

json to_json(const DatasetIndex& index) {
  json entries = json::array();
  for (const DatasetEntry& e : index.entries) {
    entries.push_back({{"video_id", e.video_id},
                       {"frame_path", e.frame_path},
                       {"mask_path", e.mask_path},
                       {"split", std::string(to_string(e.split))}});
  }
  return {{"entries", std::move(entries)}, {"seed", index.seed}};
}

DatasetIndex dataset_index_from_json(const json& j) {
  DatasetIndex index;
  try {
    index.seed = j.at("seed").get<std::int64_t>();
    for (const json& e : j.at("entries")) {
      index.entries.push_back({e.at("video_id").get<std::string>(), e.at("frame_path").get<std::string>(),
                               e.at("mask_path").get<std::string>(), split_from_string(e.at("split").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset index: ") + e.what());
  }
  return index;
}

void save_dataset_index(const std::filesystem::path& path, const DatasetIndex& index) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(index).dump(2) << '\n';
}

DatasetIndex load_dataset_index(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("dataset index parse error at byte " + std::to_string(e.byte));
  }
  DatasetIndex index = dataset_index_from_json(j);
  index.root = path.parent_path();
  return index;
}

}  // namespace stoneseg
