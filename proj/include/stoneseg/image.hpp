#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace stoneseg {

/// Row-major 2-D array; rows are image rows (y), columns are x.
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 8-bit intensities.
using GrayImage = Plane<std::uint8_t>;

/// Per-pixel ground truth or prediction, values in {0,1}.
using BinaryMask = Plane<std::uint8_t>;

/// Per-pixel stone probability in [0,1].
template <typename Scalar = float>
using ProbabilityMap = Plane<Scalar>;

/// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* pixel(int x, int y) { return data.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* pixel(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  bool valid() const {
    return width >= 1 && height >= 1 && data.size() == static_cast<std::size_t>(width) * height * 3;
  }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// True when every value is 0 or 1.
template <typename Derived>
bool is_binary(const Eigen::ArrayBase<Derived>& mask) {
  return ((mask == 0) || (mask == 1)).all();
}

}  // namespace stoneseg
