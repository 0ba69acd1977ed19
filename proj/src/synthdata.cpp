#include "stoneseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "stoneseg/errors.hpp"
#include "stoneseg/image_io.hpp"

namespace stoneseg {

using nlohmann::json;

std::string_view to_string(Challenge c) {
  switch (c) {
    case Challenge::motion_blur:
      return "motion_blur";
    case Challenge::debris:
      return "debris";
    case Challenge::foreign_object:
      return "foreign_object";
    case Challenge::saline_flash:
      return "saline_flash";
  }
  return "motion_blur";
}

Challenge challenge_from_string(std::string_view name) {
  if (name == "motion_blur" || name == "blur") return Challenge::motion_blur;
  if (name == "debris") return Challenge::debris;
  if (name == "foreign_object" || name == "foreign") return Challenge::foreign_object;
  if (name == "saline_flash" || name == "saline") return Challenge::saline_flash;
  throw ConfigError("unknown challenge '" + std::string(name) + "'");
}

std::set<Challenge> parse_challenges(std::string_view list) {
  std::set<Challenge> out;
  while (!list.empty()) {
    const std::size_t comma = list.find(',');
    const std::string_view item = list.substr(0, comma);
    if (item == "all") {
      out = {Challenge::motion_blur, Challenge::debris, Challenge::foreign_object, Challenge::saline_flash};
    } else if (!item.empty()) {
      out.insert(challenge_from_string(item));
    }
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  return out;
}

namespace {

constexpr double kRadialJitter = 0.3;
constexpr int kOutlineVertices = 24;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

// Deterministic per-pixel noise in [-1, 1].
double pixel_noise(std::uint64_t key, int x, int y) {
  const std::uint64_t h = mix(key, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y));
  return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53) * 2.0 - 1.0;
}

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

double fov_radius(const SceneSpec& spec) { return spec.fov_radius_fraction * spec.image_size / 2.0; }

}  // namespace

void SceneSpec::validate() const {
  if (image_size < 8) throw ConfigError("scene: image_size must be >= 8");
  if (stone_count_min < 0 || stone_count_max < stone_count_min) throw ConfigError("scene: bad stone count range");
  if (!(stone_radius_min > 0.0) || stone_radius_max < stone_radius_min) throw ConfigError("scene: bad stone radius range");
  if (!(fov_radius_fraction > 0.0 && fov_radius_fraction <= 1.0)) throw ConfigError("scene: fov_radius_fraction must be in (0, 1]");
  if (texture_amplitude < 0.0) throw ConfigError("scene: texture_amplitude must be >= 0");
  if (max_drift_per_frame < 0.0) throw ConfigError("scene: max_drift_per_frame must be >= 0");
  if (!(challenge_probability >= 0.0 && challenge_probability <= 1.0)) throw ConfigError("scene: challenge_probability must be in [0, 1]");
  if (stone_count_max > 0 && (1.0 + kRadialJitter) * stone_radius_max + 1.0 >= fov_radius(*this)) {
    throw ConfigError("scene: stone larger than field of view");
  }
}

json to_json(const SceneSpec& s) {
  json flags = json::array();
  for (Challenge c : s.challenges) flags.push_back(std::string(to_string(c)));
  return {{"seed", s.seed},
          {"image_size", s.image_size},
          {"stone_count_min", s.stone_count_min},
          {"stone_count_max", s.stone_count_max},
          {"stone_radius_min", s.stone_radius_min},
          {"stone_radius_max", s.stone_radius_max},
          {"texture_amplitude", s.texture_amplitude},
          {"fov_radius_fraction", s.fov_radius_fraction},
          {"max_drift_per_frame", s.max_drift_per_frame},
          {"challenges", flags},
          {"challenge_probability", s.challenge_probability}};
}

SceneSpec scene_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("scene spec must be a JSON object");
  const SceneSpec defaults;
  const json known = to_json(defaults);
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError("scene spec: unknown key '" + item.key() + "'");
  }
  SceneSpec s;
  try {
    s.seed = j.value("seed", s.seed);
    s.image_size = j.value("image_size", s.image_size);
    s.stone_count_min = j.value("stone_count_min", s.stone_count_min);
    s.stone_count_max = j.value("stone_count_max", s.stone_count_max);
    s.stone_radius_min = j.value("stone_radius_min", s.stone_radius_min);
    s.stone_radius_max = j.value("stone_radius_max", s.stone_radius_max);
    s.texture_amplitude = j.value("texture_amplitude", s.texture_amplitude);
    s.fov_radius_fraction = j.value("fov_radius_fraction", s.fov_radius_fraction);
    s.max_drift_per_frame = j.value("max_drift_per_frame", s.max_drift_per_frame);
    s.challenge_probability = j.value("challenge_probability", s.challenge_probability);
    if (j.contains("challenges")) {
      for (const json& c : j.at("challenges")) s.challenges.insert(challenge_from_string(c.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string video_id(int video_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "video_%03d", video_index);
  return buf;
}

SynthVideo::SynthVideo(const SceneSpec& spec, int video_index, int frame_count)
    : spec_(spec), video_index_(video_index), frame_count_(frame_count), id_(video_id(video_index)) {
  spec_.validate();
  if (frame_count < 1) throw ConfigError("scene: frame count must be >= 1");
  std::mt19937_64 rng(mix(spec.seed, static_cast<std::uint64_t>(video_index), 0x5CE4E));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double size = spec.image_size;
  const double centre = size / 2.0;
  const double fov = fov_radius(spec);
  const double margin = fov - (1.0 + kRadialJitter) * spec.stone_radius_max - 1.0;
  const int span = frame_count - 1;

  // Total travel stays within a fraction of the free margin so every stone
  // remains inside the field of view for the whole video.
  double drift = uniform(0.0, spec.max_drift_per_frame);
  if (span > 0) drift = std::min(drift, 0.6 * std::max(margin, 0.0) / span);
  const double heading = uniform(0.0, 2.0 * std::numbers::pi);
  drift_x_ = drift * std::cos(heading);
  drift_y_ = drift * std::sin(heading);

  tissue_[0] = uniform(120.0, 165.0);
  tissue_[1] = uniform(45.0, 80.0);
  tissue_[2] = uniform(40.0, 70.0);
  for (auto& w : wave_) {
    const double wavelength = uniform(size / 10.0, size / 2.5);
    const double angle = uniform(0.0, std::numbers::pi);
    w[0] = uniform(0.15, 0.35);
    w[1] = 2.0 * std::numbers::pi / wavelength * std::cos(angle);
    w[2] = 2.0 * std::numbers::pi / wavelength * std::sin(angle);
    w[3] = uniform(0.0, 2.0 * std::numbers::pi);
  }

  const int n_stones = std::uniform_int_distribution<int>(spec.stone_count_min, spec.stone_count_max)(rng);
  for (int k = 0; k < n_stones; ++k) {
    Stone s{};
    const double radius = uniform(spec.stone_radius_min, spec.stone_radius_max);
    const double limit = fov - (1.0 + kRadialJitter) * radius - 1.0;
    for (int attempt = 0;; ++attempt) {
      const double r = limit * std::sqrt(unit(rng));
      const double a = uniform(0.0, 2.0 * std::numbers::pi);
      s.cx = centre + r * std::cos(a);
      s.cy = centre + r * std::sin(a);
      const double ex = s.cx - span * drift_x_ - centre;
      const double ey = s.cy - span * drift_y_ - centre;
      if (std::hypot(ex, ey) <= limit || attempt > 200) break;
    }
    double coeff[3];
    double phase[3];
    double norm = 0.0;
    for (int m = 0; m < 3; ++m) {
      coeff[m] = uniform(-1.0, 1.0) / (m + 1);
      phase[m] = uniform(0.0, 2.0 * std::numbers::pi);
      norm += std::abs(coeff[m]);
    }
    for (int i = 0; i < kOutlineVertices; ++i) {
      const double theta = 2.0 * std::numbers::pi * i / kOutlineVertices;
      double noise = 0.0;
      for (int m = 0; m < 3; ++m) noise += coeff[m] * std::sin((m + 1) * theta + phase[m]);
      const double rr = radius * (1.0 + kRadialJitter * noise / norm);
      s.outline.push_back({rr * std::cos(theta), rr * std::sin(theta)});
    }
    s.color[0] = static_cast<std::uint8_t>(uniform(205.0, 240.0));
    s.color[1] = static_cast<std::uint8_t>(uniform(180.0, 215.0));
    s.color[2] = static_cast<std::uint8_t>(uniform(110.0, 160.0));
    stones_.push_back(std::move(s));
  }

  if (spec.challenges.contains(Challenge::debris)) {
    const int n = std::uniform_int_distribution<int>(3, 8)(rng);
    for (int k = 0; k < n; ++k) {
      const double r = (fov - 2.0) * std::sqrt(unit(rng));
      const double a = uniform(0.0, 2.0 * std::numbers::pi);
      specks_.push_back({centre + r * std::cos(a), centre + r * std::sin(a), uniform(0.6, 1.6) * size / 64.0});
    }
  }
  if (spec.challenges.contains(Challenge::foreign_object)) {
    has_fiber_ = true;
    const double a = uniform(0.0, 2.0 * std::numbers::pi);
    fiber_[0] = centre + fov * std::cos(a);
    fiber_[1] = centre + fov * std::sin(a);
    fiber_[2] = centre + uniform(-0.3, 0.3) * fov;
    fiber_[3] = centre + uniform(-0.3, 0.3) * fov;
  }
}

SynthFrame SynthVideo::render(int frame) const {
  const int size = spec_.image_size;
  const double centre = size / 2.0;
  const double fov = fov_radius(spec_);
  const double shift_x = frame * drift_x_;
  const double shift_y = frame * drift_y_;
  const std::uint64_t key = mix(spec_.seed, static_cast<std::uint64_t>(video_index_), static_cast<std::uint64_t>(frame) + 1);
  std::mt19937_64 rng(key);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthFrame out;
  out.polygons.image_name = frame_relpath(id_, frame);
  out.polygons.image_width = size;
  out.polygons.image_height = size;
  std::vector<BinaryMask> stone_masks;
  for (const Stone& s : stones_) {
    Polygon poly;
    poly.label = "stone";
    for (const Vertex& v : s.outline) {
      poly.vertices.push_back({std::clamp(s.cx - shift_x + v.x, 0.0, static_cast<double>(size)),
                               std::clamp(s.cy - shift_y + v.y, 0.0, static_cast<double>(size))});
    }
    stone_masks.push_back(rasterize_polygon(poly.vertices, size, size));
    out.polygons.polygons.push_back(std::move(poly));
  }
  out.mask = rasterize_polygons(out.polygons);

  RgbImage img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const double rho = std::hypot(px - centre, py - centre) / fov;
      if (rho > 1.0) continue;
      const double vignette = 1.0 - 0.35 * rho * rho;
      const double grain = 4.0 * pixel_noise(key, x, y);
      std::uint8_t* p = img.pixel(x, y);

      int owner = -1;
      for (std::size_t k = stone_masks.size(); k-- > 0;) {
        if (stone_masks[k](y, x)) {
          owner = static_cast<int>(k);
          break;
        }
      }
      if (owner >= 0) {
        const Stone& s = stones_[static_cast<std::size_t>(owner)];
        const double d = std::hypot(px - (s.cx - shift_x), py - (s.cy - shift_y));
        const double extent = std::hypot(s.outline.front().x, s.outline.front().y) + 1e-9;
        const double shade = 0.8 + 0.25 * std::max(0.0, 1.0 - d / (1.3 * extent));
        for (int c = 0; c < 3; ++c) p[c] = to_u8(s.color[c] * shade * (1.0 - 0.15 * rho * rho) + grain);
        continue;
      }
      const double wx = px + shift_x;
      const double wy = py + shift_y;
      double tex = 0.0;
      for (const auto& w : wave_) tex += w[0] * std::sin(w[1] * wx + w[2] * wy + w[3]);
      const double weights[3] = {1.0, 0.6, 0.5};
      for (int c = 0; c < 3; ++c) {
        p[c] = to_u8((tissue_[c] + spec_.texture_amplitude * weights[c] * tex) * vignette + grain);
      }
    }
  }

  const auto in_fov = [&](int x, int y) { return std::hypot(x + 0.5 - centre, y + 0.5 - centre) <= fov; };
  for (const Speck& s : specks_) {
    const double cx = s.cx - shift_x;
    const double cy = s.cy - shift_y;
    const int r = static_cast<int>(std::ceil(s.radius));
    for (int y = static_cast<int>(cy) - r; y <= static_cast<int>(cy) + r; ++y) {
      for (int x = static_cast<int>(cx) - r; x <= static_cast<int>(cx) + r; ++x) {
        if (x < 0 || y < 0 || x >= size || y >= size || out.mask(y, x) || !in_fov(x, y)) continue;
        if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) > s.radius) continue;
        std::uint8_t* p = img.pixel(x, y);
        p[0] = 228;
        p[1] = 205;
        p[2] = 150;
      }
    }
  }
  if (has_fiber_) {
    const double ax = fiber_[0] - shift_x;
    const double ay = fiber_[1] - shift_y;
    const double bx = fiber_[2] - shift_x;
    const double by = fiber_[3] - shift_y;
    const double len2 = (bx - ax) * (bx - ax) + (by - ay) * (by - ay) + 1e-12;
    const double half_width = 1.2 * size / 64.0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (out.mask(y, x) || !in_fov(x, y)) continue;
        const double px = x + 0.5;
        const double py = y + 0.5;
        const double t = std::clamp(((px - ax) * (bx - ax) + (py - ay) * (by - ay)) / len2, 0.0, 1.0);
        if (std::hypot(px - (ax + t * (bx - ax)), py - (ay + t * (by - ay))) > half_width) continue;
        std::uint8_t* p = img.pixel(x, y);
        p[0] = 205;
        p[1] = 212;
        p[2] = 222;
      }
    }
  }

  if (spec_.challenges.contains(Challenge::saline_flash) && unit(rng) < spec_.challenge_probability) {
    const double haze = 0.2 + 0.25 * unit(rng);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (!in_fov(x, y)) continue;
        std::uint8_t* p = img.pixel(x, y);
        for (int c = 0; c < 3; ++c) p[c] = to_u8(p[c] + (255.0 - p[c]) * haze);
      }
    }
  }
  if (spec_.challenges.contains(Challenge::motion_blur) && unit(rng) < spec_.challenge_probability) {
    const int length = 3 + static_cast<int>(unit(rng) * 5.0 * size / 64.0);
    const double a = unit(rng) * std::numbers::pi;
    const double ux = std::cos(a);
    const double uy = std::sin(a);
    const RgbImage src = img;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        double acc[3] = {0, 0, 0};
        for (int k = 0; k < length; ++k) {
          const double t = k - (length - 1) / 2.0;
          const int sx = std::clamp(static_cast<int>(std::lround(x + t * ux)), 0, size - 1);
          const int sy = std::clamp(static_cast<int>(std::lround(y + t * uy)), 0, size - 1);
          const std::uint8_t* q = src.pixel(sx, sy);
          for (int c = 0; c < 3; ++c) acc[c] += q[c];
        }
        std::uint8_t* p = img.pixel(x, y);
        for (int c = 0; c < 3; ++c) p[c] = to_u8(acc[c] / length);
      }
    }
  }
  out.image = std::move(img);
  return out;
}

SynthDataset generate_dataset(const SceneSpec& spec, int n_videos, int frames_per_video) {
  spec.validate();
  if (n_videos < 1 || frames_per_video < 1) throw ConfigError("generate_dataset: need at least one video and frame");
  SynthDataset data;
  data.index.seed = static_cast<std::int64_t>(spec.seed);
  for (int v = 0; v < n_videos; ++v) {
    const SynthVideo video(spec, v, frames_per_video);
    data.videos.push_back({video.id(), frames_per_video});
    for (int f = 0; f < frames_per_video; ++f) {
      SynthFrame frame = video.render(f);
      data.frames.push_back(std::move(frame.image));
      data.masks.push_back(std::move(frame.mask));
      data.annotations.push_back(std::move(frame.polygons));
      data.index.entries.push_back({video.id(), frame_relpath(video.id(), f), mask_relpath(video.id(), f), Split::train});
    }
  }
  return data;
}

void write_dataset(const std::filesystem::path& dir, const SynthDataset& data) {
  for (const VideoInfo& v : data.videos) std::filesystem::create_directories(dir / v.video_id);
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    write_rgb(dir / data.index.entries[i].frame_path, data.frames[i]);
    write_mask(dir / data.index.entries[i].mask_path, data.masks[i]);
  }
  std::ofstream ann(dir / "annotations.json");
  if (!ann) throw DataError("cannot write " + (dir / "annotations.json").string());
  ann << annotations_to_json(data.annotations).dump() << '\n';
  save_dataset_index(dir / "index.json", data.index);
}

}  // namespace stoneseg
