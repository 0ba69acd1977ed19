#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "stoneseg/nn/tensor.hpp"

namespace stoneseg::nn {

enum class LayerKind {
  conv3x3,    // stride 1, zero padding 1
  conv1x1,
  relu,
  sigmoid,
  maxpool2,   // 2x2 window, stride 2; first maximum wins ties
  upsample2,  // nearest neighbour
  concat,     // along channels, any number of inputs
  add,        // elementwise sum of two inputs
  norm,       // per-channel batch statistics with learned scale and shift
};

std::string_view to_string(LayerKind kind);

inline constexpr double kNormEpsilon = 1e-5;

/// Weight and bias of a parameterised layer; unused kinds leave them null.
/// conv weights are (out, in, k, k), norm uses weight=scale, bias=shift,
/// all biases are (out, 1, 1, 1).
template <typename Scalar>
struct LayerParams {
  const Tensor<Scalar>* weight = nullptr;
  const Tensor<Scalar>* bias = nullptr;
};

template <typename Scalar>
struct LayerGradients {
  std::vector<Tensor<Scalar>> inputs;  // one per forward input
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;
};

/// Forward pass of one layer. `name` is used in error messages.
template <typename Scalar>
Tensor<Scalar> layer_apply(LayerKind kind, const LayerParams<Scalar>& params,
                           std::span<const Tensor<Scalar>* const> inputs, std::string_view name = {});

/// Exact gradients of the layer given the forward inputs and output.
template <typename Scalar>
LayerGradients<Scalar> layer_grad(LayerKind kind, const LayerParams<Scalar>& params,
                                  std::span<const Tensor<Scalar>* const> inputs, const Tensor<Scalar>& output,
                                  const Tensor<Scalar>& upstream, std::string_view name = {});

/// Single-input convenience overloads.
template <typename Scalar>
Tensor<Scalar> layer_apply(LayerKind kind, const LayerParams<Scalar>& params, const Tensor<Scalar>& input,
                           std::string_view name = {}) {
  const Tensor<Scalar>* in[] = {&input};
  return layer_apply<Scalar>(kind, params, in, name);
}

template <typename Scalar>
LayerGradients<Scalar> layer_grad(LayerKind kind, const LayerParams<Scalar>& params, const Tensor<Scalar>& input,
                                  const Tensor<Scalar>& output, const Tensor<Scalar>& upstream,
                                  std::string_view name = {}) {
  const Tensor<Scalar>* in[] = {&input};
  return layer_grad<Scalar>(kind, params, in, output, upstream, name);
}

}  // namespace stoneseg::nn
