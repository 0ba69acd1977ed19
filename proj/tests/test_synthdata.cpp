#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "oracles.hpp"
#include "stoneseg/image_io.hpp"
#include "stoneseg/synthdata.hpp"
#include "temp_dir.hpp"

using namespace stoneseg;

namespace {

std::vector<std::vector<Vertex>> outlines(const AnnotationDoc& doc) {
  std::vector<std::vector<Vertex>> polys;
  for (const auto& p : doc.polygons) polys.push_back(p.vertices);
  return polys;
}

std::pair<double, double> centroid(const BinaryMask& m) {
  double sx = 0, sy = 0, n = 0;
  for (Eigen::Index y = 0; y < m.rows(); ++y) {
    for (Eigen::Index x = 0; x < m.cols(); ++x) {
      if (m(y, x)) {
        sx += x;
        sy += y;
        ++n;
      }
    }
  }
  return {sx / n, sy / n};
}

}  // namespace

TEST(Challenges, Parsing) {
  EXPECT_EQ(parse_challenges("blur,saline"), (std::set<Challenge>{Challenge::motion_blur, Challenge::saline_flash}));
  EXPECT_EQ(parse_challenges("all").size(), 4u);
  EXPECT_TRUE(parse_challenges("").empty());
  EXPECT_EQ(challenge_from_string(to_string(Challenge::foreign_object)), Challenge::foreign_object);
  EXPECT_THROW(parse_challenges("smoke"), ConfigError);
}

TEST(SceneSpec, JsonAndValidation) {
  SceneSpec s;
  s.challenges = {Challenge::debris};
  const SceneSpec back = scene_spec_from_json(to_json(s));
  EXPECT_EQ(back.challenges, s.challenges);
  EXPECT_EQ(back.stone_radius_max, s.stone_radius_max);
  EXPECT_THROW(scene_spec_from_json({{"stones", 3}}), ConfigError);
  SceneSpec big = s;
  big.stone_radius_max = 40.0;
  EXPECT_THROW(big.validate(), ConfigError);
  SceneSpec inverted = s;
  inverted.stone_count_min = 4;
  EXPECT_THROW(inverted.validate(), ConfigError);
}

TEST(SynthVideo, NoStonesGivesEmptyMasks) {
  SceneSpec s;
  s.stone_count_min = s.stone_count_max = 0;
  const SynthVideo v(s, 0, 5);
  for (int f = 0; f < 5; ++f) {
    const SynthFrame fr = v.render(f);
    EXPECT_FALSE(fr.mask.any());
    EXPECT_TRUE(fr.polygons.polygons.empty());
  }
}

TEST(SynthVideo, SameSeedSameFrames) {
  SceneSpec s;
  s.seed = 4;
  s.challenges = parse_challenges("all");
  const SynthVideo a(s, 2, 6);
  const SynthVideo b(s, 2, 6);
  const SynthVideo c(s, 3, 6);
  for (int f = 0; f < 6; ++f) {
    EXPECT_EQ(a.render(f).image, b.render(f).image);
    EXPECT_TRUE((a.render(f).mask == b.render(f).mask).all());
  }
  EXPECT_NE(a.render(0).image, c.render(0).image);
  EXPECT_EQ(a.id(), "video_002");
}

TEST(SynthVideo, MasksAreTheRasterisedPolygons) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    SceneSpec s;
    s.seed = seed;
    s.stone_count_max = 4;
    const SynthVideo v(s, 0, 8);
    for (int f = 0; f < 8; f += 3) {
      const SynthFrame fr = v.render(f);
      EXPECT_EQ(fr.polygons.image_width, s.image_size);
      EXPECT_TRUE((fr.mask == oracle::rasterize(outlines(fr.polygons), s.image_size, s.image_size)).all())
          << "seed " << seed << " frame " << f;
    }
  }
}

TEST(SynthVideo, ChallengesLeaveGroundTruthUntouched) {
  SceneSpec plain;
  plain.seed = 12;
  SceneSpec hard = plain;
  hard.challenges = parse_challenges("all");
  hard.challenge_probability = 1.0;
  const SynthVideo a(plain, 1, 10);
  const SynthVideo b(hard, 1, 10);
  bool pixels_differ = false;
  for (int f = 0; f < 10; ++f) {
    const SynthFrame fa = a.render(f);
    const SynthFrame fb = b.render(f);
    ASSERT_TRUE((fa.mask == fb.mask).all()) << f;
    pixels_differ |= fa.image != fb.image;
  }
  EXPECT_TRUE(pixels_differ);
}

TEST(SynthVideo, DriftIsBoundedPerFrame) {
  SceneSpec s;
  s.seed = 21;
  s.stone_count_min = s.stone_count_max = 1;
  s.stone_radius_min = 8.0;
  const SynthVideo v(s, 0, 30);
  auto prev = centroid(v.render(0).mask);
  for (int f = 1; f < 30; ++f) {
    const auto cur = centroid(v.render(f).mask);
    // centroid of a rasterised shape may wobble by under a pixel
    EXPECT_LE(std::hypot(cur.first - prev.first, cur.second - prev.second), s.max_drift_per_frame * std::sqrt(2.0) + 1.0);
    prev = cur;
  }
}

TEST(GenerateDataset, WritesLoadableLayout) {
  TempDir dir;
  SceneSpec s;
  s.image_size = 32;
  s.stone_radius_min = 3.0;
  s.stone_radius_max = 6.0;
  const SynthDataset d = generate_dataset(s, 2, 3);
  EXPECT_EQ(d.frames.size(), 6u);
  EXPECT_EQ(d.videos.size(), 2u);
  EXPECT_EQ(d.index.count(Split::train), 6u);
  write_dataset(dir.path(), d);
  const DatasetIndex index = load_dataset_index(dir / "index.json");
  ASSERT_EQ(index.entries.size(), 6u);
  const auto& e = index.entries[4];
  EXPECT_TRUE((read_mask(index.root / e.mask_path) == d.masks[4]).all());
  EXPECT_EQ(read_rgb(index.root / e.frame_path), d.frames[4]);
  std::ifstream in(dir / "annotations.json");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(parse_annotations(text).size(), 6u);
}
