#pragma once

#include <span>

#include "stoneseg/image.hpp"
#include "stoneseg/nn/model.hpp"
#include "stoneseg/nn/tensor.hpp"

namespace stoneseg::nn {

/// Stacks frames into a (batch, channels, H, W) tensor scaled to [0,1].
/// One input channel means BT.601 luma, three means RGB.
template <typename Scalar>
Tensor<Scalar> images_to_tensor(std::span<const RgbImage* const> frames, int channels);

template <typename Scalar>
Tensor<Scalar> masks_to_tensor(std::span<const BinaryMask* const> masks);

template <typename Scalar>
Plane<Scalar> output_plane(const Tensor<Scalar>& probabilities, Index n) {
  return probabilities.plane(n, 0);
}

}  // namespace stoneseg::nn
