#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "stoneseg/image.hpp"

namespace stoneseg {

struct Vertex {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vertex&, const Vertex&) = default;
};

struct Polygon {
  std::string label;
  std::vector<Vertex> vertices;  // at least 3
};

struct AnnotationDoc {
  std::string image_name;
  int image_width = 0;
  int image_height = 0;
  std::vector<Polygon> polygons;
};

/// Parses `{"images":[{"name","width","height","annotations":[{"label","points":[[x,y],...]}]}]}`.
/// Vertices are clamped into [0,width] x [0,height].
/// Throws DataError on malformed JSON (message carries the byte offset),
/// missing fields, or polygons with fewer than three vertices.
std::vector<AnnotationDoc> parse_annotations(std::string_view text);
nlohmann::json annotations_to_json(const std::vector<AnnotationDoc>& docs);

/// Even-odd rule sampled at pixel centres; several polygons are unioned.
BinaryMask rasterize_polygon(const std::vector<Vertex>& vertices, int width, int height);
BinaryMask rasterize_polygons(const AnnotationDoc& doc);

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct DatasetEntry {
  std::string video_id;
  std::string frame_path;  // relative to the index file's directory
  std::string mask_path;
  Split split = Split::train;
  friend bool operator==(const DatasetEntry&, const DatasetEntry&) = default;
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  std::int64_t seed = 0;
  std::filesystem::path root;  // not serialized; where relative paths resolve

  std::vector<DatasetEntry> select(Split split) const;
  std::size_t count(Split split) const;
};

struct VideoInfo {
  std::string video_id;
  int frame_count = 0;
};

/// Frame layout shared by every dataset writer.
std::string frame_relpath(std::string_view video_id, int frame);
std::string mask_relpath(std::string_view video_id, int frame);

/// Holds out round(fraction * videos) videos (at least one) for testing,
/// chosen by a seeded shuffle. `val_fraction` optionally carves a
/// validation group out of the remaining videos the same way.
DatasetIndex split_dataset(const std::vector<VideoInfo>& videos, double fraction, std::int64_t seed,
                           double val_fraction = 0.0);

nlohmann::json to_json(const DatasetIndex& index);
DatasetIndex dataset_index_from_json(const nlohmann::json& j);

void save_dataset_index(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex load_dataset_index(const std::filesystem::path& path);

}  // namespace stoneseg
