#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "stoneseg/errors.hpp"
#include "stoneseg/image_io.hpp"
#include "temp_dir.hpp"

using namespace stoneseg;

namespace {

RgbImage noise_image(int w, int h, unsigned seed) {
  std::mt19937 rng(seed);
  RgbImage img(w, h);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng());
  return img;
}

}  // namespace

TEST(ImageIo, PngRgbRoundTrip) {
  TempDir dir;
  const RgbImage img = noise_image(17, 9, 1);
  write_rgb(dir / "a.png", img);
  EXPECT_EQ(read_rgb(dir / "a.png"), img);
}

TEST(ImageIo, PpmRgbRoundTrip) {
  TempDir dir;
  const RgbImage img = noise_image(5, 12, 2);
  write_rgb(dir / "a.ppm", img);
  EXPECT_EQ(read_rgb(dir / "a.ppm"), img);
}

TEST(ImageIo, GrayRoundTripPngAndPgm) {
  TempDir dir;
  GrayImage g(4, 6);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<std::uint8_t>(i * 10);
  for (const char* name : {"g.png", "g.pgm"}) {
    write_gray(dir / name, g);
    EXPECT_TRUE((read_gray(dir / name) == g).all()) << name;
  }
}

TEST(ImageIo, MasksAreStoredAs0And255) {
  TempDir dir;
  BinaryMask m = BinaryMask::Zero(3, 4);
  m(1, 2) = 1;
  write_mask(dir / "m.png", m);
  const GrayImage raw = read_gray(dir / "m.png");
  EXPECT_EQ(raw(1, 2), 255);
  EXPECT_EQ(raw(0, 0), 0);
  EXPECT_TRUE((read_mask(dir / "m.png") == m).all());
}

TEST(ImageIo, HandWrittenPpmHeaderWithComment) {
  TempDir dir;
  std::ofstream(dir / "c.ppm", std::ios::binary) << "P6\n# comment\n2 1\n255\n" << std::string("\x01\x02\x03\x04\x05\x06", 6);
  const RgbImage img = read_rgb(dir / "c.ppm");
  ASSERT_EQ(img.width, 2);
  EXPECT_EQ(img.pixel(1, 0)[2], 6);
}

TEST(ImageIo, MissingOrCorruptFilesRaiseDataError) {
  TempDir dir;
  EXPECT_THROW(read_rgb(dir / "missing.png"), DataError);
  std::ofstream(dir / "bad.png", std::ios::binary) << "not a png";
  EXPECT_THROW(read_rgb(dir / "bad.png"), DataError);
  std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n4 4\n255\nabc";
  EXPECT_THROW(read_rgb(dir / "short.ppm"), DataError);
}
