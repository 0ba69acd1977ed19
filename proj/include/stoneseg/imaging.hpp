#pragma once

#include <utility>
#include <vector>

#include "stoneseg/image.hpp"

namespace stoneseg {

struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Axis-aligned pixel box; (x0, y0) is the top-left pixel.
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;

  bool inside(int width, int height) const {
    return w >= 1 && h >= 1 && x0 >= 0 && y0 >= 0 && x0 + w <= width && y0 + h <= height;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Outer boundary of one 8-connected foreground component.
///
/// Points are pixel-corner coordinates of the crack boundary, traversed
/// clockwise on screen with collinear points removed, so a hole-free
/// component's shoelace area equals its pixel count.
struct Contour {
  std::vector<Point> points;
  double area = 0.0;
  long pixel_count = 0;  // pixels of the component, holes excluded

  Rect bounds() const;
};

struct OtsuResult {
  int threshold = 0;
  bool degenerate = false;
};

GrayImage to_grayscale(const RgbImage& img);

/// Global threshold maximizing between-class variance; class 0 is <= t.
/// Ties resolve to the smallest t.
OtsuResult otsu_threshold(const GrayImage& img);

/// 1 where intensity > threshold.
BinaryMask binarize(const GrayImage& img, int threshold);

/// One contour per 8-connected component, in raster order of each
/// component's first pixel.
std::vector<Contour> find_contours(const BinaryMask& mask);

double shoelace_area(const std::vector<Point>& loop);

struct CropResult {
  RgbImage cropped;
  Rect box;
};

/// grayscale -> Otsu -> binarize -> largest contour -> bounding box -> crop.
/// Throws DataError("uncroppable frame") when nothing is in the foreground.
CropResult auto_crop(const RgbImage& img);

RgbImage crop(const RgbImage& img, const Rect& box);

template <typename Scalar>
Plane<Scalar> crop(const Plane<Scalar>& plane, const Rect& box) {
  return plane.block(box.y0, box.x0, box.h, box.w);
}

RgbImage resize_bilinear(const RgbImage& img, int width, int height);

template <typename Scalar>
Plane<Scalar> resize_nearest(const Plane<Scalar>& src, int width, int height) {
  Plane<Scalar> out(height, width);
  for (int y = 0; y < height; ++y) {
    const auto sy = static_cast<Eigen::Index>(static_cast<long>(y) * src.rows() / height);
    for (int x = 0; x < width; ++x) {
      out(y, x) = src(sy, static_cast<long>(x) * src.cols() / width);
    }
  }
  return out;
}

/// Aspect-preserving bilinear resize onto a black canvas of the target size.
/// `content` receives the region of the canvas holding the image.
RgbImage letterbox(const RgbImage& img, int width, int height, Rect* content = nullptr);

}  // namespace stoneseg
