#include "stoneseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "stoneseg/errors.hpp"
#include "stoneseg/imaging.hpp"

namespace stoneseg {
namespace {

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> data;
};

std::string extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng initialisation failed");
  }
  RawImage raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.data.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
  rows.resize(static_cast<std::size_t>(raw.height));
  for (int y = 0; y < raw.height; ++y) {
    rows[static_cast<std::size_t>(y)] = raw.data.data() + static_cast<std::size_t>(y) * raw.width * raw.channels;
  }
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (raw.channels != 1 && raw.channels != 3) throw DataError("unsupported PNG layout: " + path.string());
  return raw;
}

void write_png(const std::filesystem::path& path, const std::uint8_t* data, int width, int height, int channels) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot write " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 1);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(data + static_cast<std::size_t>(y) * width * channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RawImage read_netpbm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  RawImage raw;
  if (magic == "P6") {
    raw.channels = 3;
  } else if (magic == "P5") {
    raw.channels = 1;
  } else {
    throw DataError("unsupported netpbm type in " + path.string());
  }
  const auto next_int = [&]() {
    int value = 0;
    while (in >> std::ws && in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
    }
    if (!(in >> value)) throw DataError("malformed netpbm header: " + path.string());
    return value;
  };
  raw.width = next_int();
  raw.height = next_int();
  const int maxval = next_int();
  if (raw.width < 1 || raw.height < 1 || maxval != 255) throw DataError("unsupported netpbm header: " + path.string());
  in.get();
  raw.data.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
  if (!in.read(reinterpret_cast<char*>(raw.data.data()), static_cast<std::streamsize>(raw.data.size()))) {
    throw DataError("truncated netpbm data: " + path.string());
  }
  return raw;
}

void write_netpbm(const std::filesystem::path& path, const std::uint8_t* data, int width, int height, int channels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << (channels == 3 ? "P6" : "P5") << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(width) * height * channels);
}

RawImage read_raw(const std::filesystem::path& path) {
  const std::string ext = extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".ppm" || ext == ".pgm") return read_netpbm(path);
  throw DataError("unsupported image extension: " + path.string());
}

void write_raw(const std::filesystem::path& path, const std::uint8_t* data, int width, int height, int channels) {
  const std::string ext = extension(path);
  if (ext == ".png") return write_png(path, data, width, height, channels);
  if (ext == ".ppm" || ext == ".pgm") {
    if ((ext == ".ppm") != (channels == 3)) throw DataError("channel count does not match " + path.string());
    return write_netpbm(path, data, width, height, channels);
  }
  throw DataError("unsupported image extension: " + path.string());
}

}  // namespace

RgbImage read_rgb(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  RgbImage img(raw.width, raw.height);
  if (raw.channels == 3) {
    img.data = std::move(raw.data);
  } else {
    for (std::size_t i = 0; i < raw.data.size(); ++i) {
      std::fill_n(img.data.begin() + static_cast<std::ptrdiff_t>(i * 3), 3, raw.data[i]);
    }
  }
  return img;
}

GrayImage read_gray(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  if (raw.channels == 3) {
    RgbImage rgb(raw.width, raw.height);
    rgb.data = std::move(raw.data);
    return to_grayscale(rgb);
  }
  GrayImage gray(raw.height, raw.width);
  std::copy(raw.data.begin(), raw.data.end(), gray.data());
  return gray;
}

void write_rgb(const std::filesystem::path& path, const RgbImage& img) {
  if (!img.valid()) throw DataError("write_rgb: invalid image");
  write_raw(path, img.data.data(), img.width, img.height, 3);
}

void write_gray(const std::filesystem::path& path, const GrayImage& img) {
  write_raw(path, img.data(), static_cast<int>(img.cols()), static_cast<int>(img.rows()), 1);
}

BinaryMask read_mask(const std::filesystem::path& path) {
  return (read_gray(path) != 0).cast<std::uint8_t>();
}

void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  const GrayImage scaled = (mask != 0).cast<std::uint8_t>() * std::uint8_t{255};
  write_gray(path, scaled);
}

}  // namespace stoneseg
