#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "stoneseg/annotations.hpp"
#include "stoneseg/image.hpp"

namespace stoneseg {

enum class Challenge { motion_blur, debris, foreign_object, saline_flash };

std::string_view to_string(Challenge c);
Challenge challenge_from_string(std::string_view name);
/// Comma-separated list; accepts "blur", "saline" and "foreign" as short names.
std::set<Challenge> parse_challenges(std::string_view list);

struct SceneSpec {
  std::uint64_t seed = 0;
  int image_size = 64;
  int stone_count_min = 1;
  int stone_count_max = 3;
  double stone_radius_min = 5.0;
  double stone_radius_max = 12.0;
  double texture_amplitude = 18.0;
  double fov_radius_fraction = 0.95;  // of half the image size
  double max_drift_per_frame = 0.5;   // pixels
  std::set<Challenge> challenges;
  // Debris and foreign objects persist for the whole video when flagged; blur and
  // saline flashes hit each frame independently with this probability.
  double challenge_probability = 0.5;

  /// Throws ConfigError, including when a stone cannot fit in the field of view.
  void validate() const;
};

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

/// One rendered frame with its exact ground truth.
struct SynthFrame {
  RgbImage image;
  BinaryMask mask;
  AnnotationDoc polygons;  // the stones that generated `mask`
};

/// A drifting camera over a fixed scene; frames are rendered on demand.
class SynthVideo {
 public:
  SynthVideo(const SceneSpec& spec, int video_index, int frame_count);

  SynthFrame render(int frame) const;
  int frame_count() const { return frame_count_; }
  const std::string& id() const { return id_; }

  struct Stone {
    double cx, cy;                   // centre at frame 0
    std::vector<Vertex> outline;     // relative to the centre
    std::uint8_t color[3];
  };
  struct Speck {
    double cx, cy, radius;
  };

 private:
  SceneSpec spec_;
  int video_index_;
  int frame_count_;
  std::string id_;
  double drift_x_ = 0.0;
  double drift_y_ = 0.0;
  double tissue_[3] = {0, 0, 0};
  double wave_[4][4] = {};  // amplitude, kx, ky, phase
  std::vector<Stone> stones_;
  std::vector<Speck> specks_;
  bool has_fiber_ = false;
  double fiber_[4] = {};  // x0, y0, x1, y1 at frame 0
};

struct SynthDataset {
  std::vector<RgbImage> frames;
  std::vector<BinaryMask> masks;
  std::vector<AnnotationDoc> annotations;
  std::vector<VideoInfo> videos;
  DatasetIndex index;  // every entry in the train split
};

std::string video_id(int video_index);

SynthDataset generate_dataset(const SceneSpec& spec, int n_videos, int frames_per_video);

/// Writes frames, masks, annotations.json and index.json under `dir`.
void write_dataset(const std::filesystem::path& dir, const SynthDataset& data);

}  // namespace stoneseg
