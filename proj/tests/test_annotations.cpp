#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "oracles.hpp"
#include "stoneseg/annotations.hpp"
#include "stoneseg/errors.hpp"
#include "temp_dir.hpp"

using namespace stoneseg;

namespace {

std::string error_of(std::string_view text) {
  try {
    parse_annotations(text);
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

std::vector<VideoInfo> videos(int n, int frames = 3) {
  std::vector<VideoInfo> v;
  for (int i = 0; i < n; ++i) v.push_back({"vid" + std::to_string(i), frames + i % 4});
  return v;
}

}  // namespace

TEST(ParseAnnotations, SquareDocument) {
  const auto docs = parse_annotations(
      R"({"images":[{"name":"frame_000001.png","width":8,"height":6,)"
      R"("annotations":[{"label":"stone","points":[[1,1],[5,1],[5,5],[1,5]]}]}]})");
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0].image_name, "frame_000001.png");
  EXPECT_EQ(docs[0].image_width, 8);
  ASSERT_EQ(docs[0].polygons.size(), 1u);
  EXPECT_EQ(docs[0].polygons[0].label, "stone");
  EXPECT_EQ(docs[0].polygons[0].vertices, (std::vector<Vertex>{{1, 1}, {5, 1}, {5, 5}, {1, 5}}));
}

TEST(ParseAnnotations, EmptyImageList) { EXPECT_TRUE(parse_annotations(R"({"images":[]})").empty()); }

TEST(ParseAnnotations, Errors) {
  EXPECT_NE(error_of(R"({"images":[{"name":"a.png","width":4,"height":4,"annotations":[{"label":"stone","points":[[0,0],[1,1]]}]}]})")
                .find("a.png"),
            std::string::npos);
  EXPECT_NE(error_of(R"({"images":[{"name":"a.png","height":4,"annotations":[]}]})").find("'width'"), std::string::npos);
  EXPECT_NE(error_of(R"({"images":[)").find("byte"), std::string::npos);
  EXPECT_NE(error_of(R"({"pictures":[]})").find("'images'"), std::string::npos);
}

TEST(ParseAnnotations, VerticesAreClampedAndJsonRoundTrips) {
  const auto docs = parse_annotations(
      R"({"images":[{"name":"a.png","width":4,"height":4,"annotations":[{"label":"stone","points":[[-2,0],[9,0],[2,7]]}]}]})");
  EXPECT_EQ(docs[0].polygons[0].vertices, (std::vector<Vertex>{{0, 0}, {4, 0}, {2, 4}}));
  const auto again = parse_annotations(annotations_to_json(docs).dump());
  EXPECT_EQ(again[0].polygons[0].vertices, docs[0].polygons[0].vertices);
}

TEST(Rasterize, SquareCoversCentresStrictlyInside) {
  const std::vector<Vertex> square{{1, 1}, {5, 1}, {5, 5}, {1, 5}};
  const BinaryMask m = rasterize_polygon(square, 8, 8);
  BinaryMask expected = BinaryMask::Zero(8, 8);
  expected.block(1, 1, 4, 4).setOnes();
  EXPECT_TRUE((m == expected).all());
  EXPECT_TRUE((m == oracle::rasterize({square}, 8, 8)).all());
}

TEST(Rasterize, TriangleMatchesCentreInequality) {
  const std::vector<Vertex> tri{{0, 0}, {8, 0}, {0, 8}};
  const BinaryMask m = rasterize_polygon(tri, 8, 8);
  EXPECT_TRUE((m == oracle::rasterize({tri}, 8, 8)).all());
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) EXPECT_EQ(m(y, x), (x + 0.5) + (y + 0.5) < 8 ? 1 : 0) << x << "," << y;
  }
}

TEST(Rasterize, DisjointSquaresUnion) {
  AnnotationDoc doc{"a.png", 10, 10, {}};
  doc.polygons.push_back({"stone", {{0, 0}, {3, 0}, {3, 3}, {0, 3}}});
  doc.polygons.push_back({"stone", {{5, 5}, {9, 5}, {9, 9}, {5, 9}}});
  EXPECT_EQ(rasterize_polygons(doc).cast<int>().sum(), 9 + 16);
}

TEST(Rasterize, MatchesOracleOnRandomPolygons) {
  std::mt19937_64 rng(42);
  for (int k = 0; k < 300; ++k) {
    const int w = 4 + static_cast<int>(rng() % 40);
    const int h = 4 + static_cast<int>(rng() % 40);
    const auto poly = oracle::random_simple_polygon(rng, 3 + static_cast<int>(rng() % 10), w, h, k % 2 == 0);
    ASSERT_TRUE((rasterize_polygon(poly, w, h) == oracle::rasterize({poly}, w, h)).all()) << "polygon " << k;
  }
}

TEST(Rasterize, UnionIsOrderIndependent) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 50; ++k) {
    AnnotationDoc doc{"a.png", 32, 32, {}};
    for (int p = 0; p < 3; ++p) doc.polygons.push_back({"stone", oracle::random_simple_polygon(rng, 6, 32, 32, false)});
    AnnotationDoc reversed = doc;
    std::reverse(reversed.polygons.begin(), reversed.polygons.end());
    const BinaryMask a = rasterize_polygons(doc);
    ASSERT_TRUE((a == rasterize_polygons(reversed)).all());
    std::vector<std::vector<Vertex>> polys;
    for (const auto& p : doc.polygons) polys.push_back(p.vertices);
    ASSERT_TRUE((a == oracle::rasterize(polys, 32, 32)).all());
  }
}

TEST(SplitDataset, TwentySevenVideosHoldOutFive) {
  const DatasetIndex index = split_dataset(videos(27), 5.0 / 27.0, 11);
  std::set<std::string> test, train;
  for (const auto& e : index.entries) (e.split == Split::test ? test : train).insert(e.video_id);
  EXPECT_EQ(test.size(), 5u);
  EXPECT_EQ(train.size(), 22u);
}

TEST(SplitDataset, DeterministicAndMinimumOne) {
  const DatasetIndex a = split_dataset(videos(10), 0.2, 5);
  const DatasetIndex b = split_dataset(videos(10), 0.2, 5);
  EXPECT_EQ(a.entries, b.entries);
  std::set<std::string> test;
  for (const auto& e : a.entries) {
    if (e.split == Split::test) test.insert(e.video_id);
  }
  EXPECT_EQ(test.size(), 2u);

  const DatasetIndex two = split_dataset(videos(2), 0.1, 1);
  EXPECT_GT(two.count(Split::test), 0u);
  EXPECT_GT(two.count(Split::train), 0u);
}

TEST(SplitDataset, EveryVideoKeepsOneSplitAndAllFrames) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 50; ++k) {
    const int n = 2 + static_cast<int>(rng() % 30);
    const auto vids = videos(n);
    const double fraction = 0.1 + 0.1 * static_cast<double>(rng() % 11) / 10.0;
    const DatasetIndex index = split_dataset(vids, fraction, static_cast<std::int64_t>(rng()), k % 3 ? 0.0 : 0.15);
    std::map<std::string, std::set<Split>> splits;
    std::map<std::string, int> frames;
    for (const auto& e : index.entries) {
      splits[e.video_id].insert(e.split);
      ++frames[e.video_id];
    }
    for (const VideoInfo& v : vids) {
      ASSERT_EQ(splits[v.video_id].size(), 1u);
      ASSERT_EQ(frames[v.video_id], v.frame_count);
    }
    long test_videos = 0;
    for (const auto& [id, s] : splits) test_videos += *s.begin() == Split::test;
    ASSERT_EQ(test_videos, std::max(1L, std::lround(fraction * n)));
  }
}

TEST(SplitDataset, Errors) {
  EXPECT_THROW(split_dataset(videos(1), 0.1, 0), DataError);
  EXPECT_THROW(split_dataset(videos(5), 0.5, 0), ConfigError);
  EXPECT_THROW(split_dataset(videos(5), 0.05, 0), ConfigError);
}

TEST(DatasetIndex, JsonRoundTripResolvesRoot) {
  TempDir dir;
  const DatasetIndex index = split_dataset(videos(6), 0.15, 3, 0.2);
  save_dataset_index(dir / "index.json", index);
  const DatasetIndex loaded = load_dataset_index(dir / "index.json");
  EXPECT_EQ(loaded.entries, index.entries);
  EXPECT_EQ(loaded.seed, 3);
  EXPECT_EQ(loaded.root, dir.path());
  EXPECT_EQ(index.entries.front().frame_path, frame_relpath(index.entries.front().video_id, 0));
  EXPECT_EQ(frame_relpath("v", 7), "v/frame_000007.png");
  EXPECT_EQ(mask_relpath("v", 7), "v/mask_000007.png");
}
