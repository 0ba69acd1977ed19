#include "stoneseg/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

#include "stoneseg/errors.hpp"

namespace stoneseg {

GrayImage to_grayscale(const RgbImage& img) {
  GrayImage gray(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::uint8_t* p = img.pixel(x, y);
      const double luma = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
      gray(y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
    }
  }
  return gray;
}

namespace {

using u128 = unsigned __int128;

// Images up to this many pixels compare variances exactly in 128-bit
// integers; larger ones fall back to long double.
constexpr long kExactOtsuPixels = 400000;

}  // namespace

OtsuResult otsu_threshold(const GrayImage& img) {
  if (img.size() == 0) throw DataError("otsu_threshold: empty image");

  std::array<long, 256> hist{};
  for (Eigen::Index i = 0; i < img.size(); ++i) ++hist[img.data()[i]];

  const long total = static_cast<long>(img.size());
  long total_sum = 0;
  int distinct = 0;
  int only_value = 0;
  for (int v = 0; v < 256; ++v) {
    total_sum += hist[v] * v;
    if (hist[v] > 0) {
      ++distinct;
      only_value = v;
    }
  }
  if (distinct == 1) return {std::max(only_value - 1, 0), true};

  // Between-class variance is D^2 / (n0 n1 N^2) with D = N*S0 - n0*S, so
  // comparing D^2 / (n0 n1) across thresholds is enough.
  const bool exact = total <= kExactOtsuPixels;
  int best_t = 0;
  u128 best_num = 0;
  u128 best_den = 1;
  long double best_value = -1.0L;

  long n0 = 0;
  long s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[t];
    s0 += hist[t] * t;
    const long n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const long d = total * s0 - n0 * total_sum;
    const auto d_abs = static_cast<u128>(d < 0 ? -d : d);
    const u128 num = d_abs * d_abs;
    const u128 den = static_cast<u128>(n0) * static_cast<u128>(n1);
    if (exact) {
      if (best_value < 0.0L || num * best_den > best_num * den) {
        best_num = num;
        best_den = den;
        best_value = 0.0L;
        best_t = t;
      }
    } else {
      const long double value = static_cast<long double>(d) * d / (static_cast<long double>(n0) * n1);
      if (value > best_value) {
        best_value = value;
        best_t = t;
      }
    }
  }
  return {best_t, false};
}

BinaryMask binarize(const GrayImage& img, int threshold) {
  return (img.cast<int>() > threshold).cast<std::uint8_t>();
}

Rect Contour::bounds() const {
  int x_min = std::numeric_limits<int>::max();
  int y_min = std::numeric_limits<int>::max();
  int x_max = std::numeric_limits<int>::min();
  int y_max = std::numeric_limits<int>::min();
  for (const Point& p : points) {
    x_min = std::min(x_min, p.x);
    y_min = std::min(y_min, p.y);
    x_max = std::max(x_max, p.x);
    y_max = std::max(y_max, p.y);
  }
  return {x_min, y_min, x_max - x_min, y_max - y_min};
}

double shoelace_area(const std::vector<Point>& loop) {
  long twice = 0;
  for (std::size_t i = 0; i < loop.size(); ++i) {
    const Point& a = loop[i];
    const Point& b = loop[(i + 1) % loop.size()];
    twice += static_cast<long>(a.x) * b.y - static_cast<long>(b.x) * a.y;
  }
  return std::abs(static_cast<double>(twice)) / 2.0;
}

namespace {

// Headings in y-down screen coordinates, clockwise order.
constexpr std::array<Point, 4> kHeading = {{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};  // E S W N

// Pixels ahead-left and ahead-right of vertex (x, y) for each heading,
// as offsets from the vertex to the pixel's top-left corner.
constexpr std::array<Point, 4> kAheadLeft = {{{0, -1}, {0, 0}, {-1, 0}, {-1, -1}}};
constexpr std::array<Point, 4> kAheadRight = {{{0, 0}, {-1, 0}, {-1, -1}, {0, -1}}};

// Crack-following with the component on the right-hand side. A foreground
// pixel ahead-left always wins, which joins diagonal neighbours
// (8-connectivity).
std::vector<Point> trace_outer(const Plane<int>& labels, int label, Point start) {
  const auto member = [&](int x, int y) {
    return x >= 0 && y >= 0 && y < labels.rows() && x < labels.cols() && labels(y, x) == label;
  };
  std::vector<Point> corners;
  Point v = start;
  int heading = 0;
  int previous = -1;
  do {
    if (heading != previous) corners.push_back(v);
    previous = heading;
    v.x += kHeading[heading].x;
    v.y += kHeading[heading].y;
    const Point l = kAheadLeft[heading];
    const Point r = kAheadRight[heading];
    if (member(v.x + l.x, v.y + l.y)) {
      heading = (heading + 3) % 4;
    } else if (!member(v.x + r.x, v.y + r.y)) {
      heading = (heading + 1) % 4;
    }
  } while (!(v == start && heading == 0));
  return corners;
}

}  // namespace

std::vector<Contour> find_contours(const BinaryMask& mask) {
  const auto rows = mask.rows();
  const auto cols = mask.cols();
  Plane<int> labels = Plane<int>::Constant(rows, cols, -1);
  std::vector<Contour> contours;
  std::vector<Point> stack;

  int next_label = 0;
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      if (mask(y, x) == 0 || labels(y, x) >= 0) continue;
      const int label = next_label++;
      long count = 0;
      labels(y, x) = label;
      stack.push_back({static_cast<int>(x), static_cast<int>(y)});
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        ++count;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = p.x + dx;
            const int ny = p.y + dy;
            if (nx < 0 || ny < 0 || nx >= cols || ny >= rows) continue;
            if (mask(ny, nx) == 0 || labels(ny, nx) >= 0) continue;
            labels(ny, nx) = label;
            stack.push_back({nx, ny});
          }
        }
      }
      Contour c;
      c.points = trace_outer(labels, label, {static_cast<int>(x), static_cast<int>(y)});
      c.area = shoelace_area(c.points);
      c.pixel_count = count;
      contours.push_back(std::move(c));
    }
  }
  return contours;
}

RgbImage crop(const RgbImage& img, const Rect& box) {
  if (!box.inside(img.width, img.height)) throw ShapeError("crop: box outside image");
  RgbImage out(box.w, box.h);
  for (int y = 0; y < box.h; ++y) {
    const std::uint8_t* src = img.pixel(box.x0, box.y0 + y);
    std::copy(src, src + static_cast<std::ptrdiff_t>(box.w) * 3, out.pixel(0, y));
  }
  return out;
}

CropResult auto_crop(const RgbImage& img) {
  if (!img.valid()) throw DataError("auto_crop: invalid image");
  const GrayImage gray = to_grayscale(img);
  const OtsuResult otsu = otsu_threshold(gray);
  const std::vector<Contour> contours = find_contours(binarize(gray, otsu.threshold));
  if (contours.empty()) throw DataError("uncroppable frame");

  const Contour* best = &contours.front();
  for (const Contour& c : contours) {
    if (c.area > best->area) best = &c;
  }
  const Rect box = best->bounds();
  return {crop(img, box), box};
}

RgbImage resize_bilinear(const RgbImage& img, int width, int height) {
  if (width < 1 || height < 1) throw ShapeError("resize_bilinear: target size must be positive");
  RgbImage out(width, height);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;

  struct Tap {
    int lo, hi;
    double frac;
  };
  const auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
      const double src = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
      const int lo = static_cast<int>(src);
      t[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, n_in - 1), src - lo};
    }
    return t;
  };
  const std::vector<Tap> tx = taps(width, img.width, sx);
  const std::vector<Tap> ty = taps(height, img.height, sy);

  for (int y = 0; y < height; ++y) {
    const Tap& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const Tap& b = tx[static_cast<std::size_t>(x)];
      const std::uint8_t* p00 = img.pixel(b.lo, a.lo);
      const std::uint8_t* p01 = img.pixel(b.hi, a.lo);
      const std::uint8_t* p10 = img.pixel(b.lo, a.hi);
      const std::uint8_t* p11 = img.pixel(b.hi, a.hi);
      std::uint8_t* q = out.pixel(x, y);
      for (int ch = 0; ch < 3; ++ch) {
        const double top = p00[ch] + (p01[ch] - p00[ch]) * b.frac;
        const double bottom = p10[ch] + (p11[ch] - p10[ch]) * b.frac;
        q[ch] = static_cast<std::uint8_t>(std::lround(top + (bottom - top) * a.frac));
      }
    }
  }
  return out;
}

RgbImage letterbox(const RgbImage& img, int width, int height, Rect* content) {
  const double scale = std::min(static_cast<double>(width) / img.width, static_cast<double>(height) / img.height);
  const int w = std::clamp(static_cast<int>(std::lround(img.width * scale)), 1, width);
  const int h = std::clamp(static_cast<int>(std::lround(img.height * scale)), 1, height);
  const Rect box{(width - w) / 2, (height - h) / 2, w, h};
  if (content) *content = box;

  const RgbImage resized = (w == img.width && h == img.height) ? img : resize_bilinear(img, w, h);
  if (w == width && h == height) return resized;
  RgbImage out(width, height);
  for (int y = 0; y < h; ++y) {
    std::copy(resized.pixel(0, y), resized.pixel(0, y) + static_cast<std::ptrdiff_t>(w) * 3,
              out.pixel(box.x0, box.y0 + y));
  }
  return out;
}

}  // namespace stoneseg
