#include "stoneseg/nn/convert.hpp"

#include "stoneseg/imaging.hpp"

namespace stoneseg::nn {

template <typename Scalar>
Tensor<Scalar> images_to_tensor(std::span<const RgbImage* const> frames, int channels) {
  if (frames.empty()) throw ShapeError("images_to_tensor: no frames");
  if (channels != 1 && channels != 3) throw ShapeError("images_to_tensor: channels must be 1 or 3");
  const int w = frames[0]->width;
  const int h = frames[0]->height;
  Tensor<Scalar> t({static_cast<Index>(frames.size()), channels, h, w});
  constexpr Scalar scale = Scalar(1) / Scalar(255);
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const RgbImage& img = *frames[n];
    if (img.width != w || img.height != h) throw ShapeError("images_to_tensor: frames differ in size");
    const auto idx = static_cast<Index>(n);
    if (channels == 1) {
      t.plane(idx, 0) = to_grayscale(img).template cast<Scalar>() * scale;
      continue;
    }
    for (int c = 0; c < 3; ++c) {
      auto plane = t.plane(idx, c);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) plane(y, x) = static_cast<Scalar>(img.pixel(x, y)[c]) * scale;
      }
    }
  }
  return t;
}

template <typename Scalar>
Tensor<Scalar> masks_to_tensor(std::span<const BinaryMask* const> masks) {
  if (masks.empty()) throw ShapeError("masks_to_tensor: no masks");
  const Index h = masks[0]->rows();
  const Index w = masks[0]->cols();
  Tensor<Scalar> t({static_cast<Index>(masks.size()), 1, h, w});
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n]->rows() != h || masks[n]->cols() != w) throw ShapeError("masks_to_tensor: masks differ in size");
    t.plane(static_cast<Index>(n), 0) = (*masks[n] != 0).template cast<Scalar>();
  }
  return t;
}

template Tensor<float> images_to_tensor<float>(std::span<const RgbImage* const>, int);
template Tensor<double> images_to_tensor<double>(std::span<const RgbImage* const>, int);
template Tensor<float> masks_to_tensor<float>(std::span<const BinaryMask* const>);
template Tensor<double> masks_to_tensor<double>(std::span<const BinaryMask* const>);

}  // namespace stoneseg::nn
