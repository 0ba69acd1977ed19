#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stoneseg/nn/layers.hpp"
#include "stoneseg/nn/tensor.hpp"

namespace stoneseg::nn {

enum class BlockKind { plain, residual, dense };

std::string_view to_string(BlockKind kind);
BlockKind block_kind_from_string(std::string_view name);

struct DenseSettings {
  int growth_rate = 4;
  int layers_per_block = 2;
  friend bool operator==(const DenseSettings&, const DenseSettings&) = default;
};

struct ModelConfig {
  BlockKind block_kind = BlockKind::plain;
  int depth = 2;
  int base_channels = 8;
  std::optional<DenseSettings> dense;  // present iff block_kind == dense
  bool nested_skips = false;           // U-Net++ topology
  bool use_norm = false;               // per-channel batch-statistic normalisation after each conv
  bool normalize_input = false;        // per-sample input standardisation
  int input_channels = 3;
  int output_channels = 1;
  int input_height = 64;
  int input_width = 64;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// "unet" / "unetpp" with the block kind appended, e.g. "unetpp_residual".
  std::string arch_name() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
/// Rejects unknown keys.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named parameter tensors, iterated in name order.
template <typename Scalar>
using Parameters = std::map<std::string, Tensor<Scalar>>;

template <typename To, typename From>
Parameters<To> cast_parameters(const Parameters<From>& params) {
  Parameters<To> out;
  for (const auto& [name, t] : params) out.emplace(name, t.template cast<To>());
  return out;
}

/// One operation of the dataflow graph. Value 0 is the network input.
struct Node {
  LayerKind kind;
  std::string name;  // parameter prefix for conv/norm, label otherwise
  std::vector<int> inputs;
  int output = 0;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  Index fan_in = 0;  // 0 for biases and norm shift
  bool is_scale = false;
};

struct Network {
  std::vector<Node> nodes;
  std::vector<ParamSpec> params;
  int value_count = 1;
  int logits = 0;  // value holding pre-sigmoid output
};

/// Builds the dataflow graph: encoder levels (block, maxpool), bottleneck,
/// decoder nodes X[i][j] (upsample deeper node, concat with same-level
/// predecessors, block), then a 1x1 head. Without nested skips only the
/// U-Net decoder X[i][depth-i] exists and it sees X[i][0] alone.
Network build_network(const ModelConfig& config);

/// He-initialised parameters (N(0, 2/fan_in)), zero biases, unit norm
/// scales. Deterministic in (config, seed).
template <typename Scalar>
Parameters<Scalar> build_model(const ModelConfig& config, std::uint64_t seed);

Index parameter_count(const ModelConfig& config);

/// Throws CheckpointError(shape_mismatch) if names or shapes disagree.
template <typename Scalar>
void validate_parameters(const ModelConfig& config, const Parameters<Scalar>& params);

/// All intermediate values of one forward pass.
template <typename Scalar>
struct ForwardPass {
  std::vector<Tensor<Scalar>> values;
  Tensor<Scalar> probabilities;
};

template <typename Scalar>
ForwardPass<Scalar> forward_pass(const Network& net, const ModelConfig& config, const Parameters<Scalar>& params,
                                 const Tensor<Scalar>& input);

/// Stone probabilities, shape (batch, 1, H, W), every value in (0,1) up to
/// floating-point saturation. Throws NonFiniteError naming the layer.
template <typename Scalar>
Tensor<Scalar> forward(const ModelConfig& config, const Parameters<Scalar>& params, const Tensor<Scalar>& input);

template <typename Scalar>
struct BackwardResult {
  Scalar loss = 0;         // mean clamped BCE over batch and pixels
  double logit_loss = 0.0;  // the same BCE evaluated from the logits, unclamped
  Parameters<Scalar> grads;
  Tensor<Scalar> probabilities;
};

/// Loss and parameter gradients for a batch. `targets` has the output shape
/// and holds 0/1. The gradient at the logits is (p - y) / count.
template <typename Scalar>
BackwardResult<Scalar> backward(const ModelConfig& config, const Parameters<Scalar>& params,
                                const Tensor<Scalar>& input, const Tensor<Scalar>& targets);

template <typename Scalar>
Scalar bce_loss(const Tensor<Scalar>& probabilities, const Tensor<Scalar>& targets);

/// Mean of max(z,0) - z*y + log(1 + exp(-|z|)); unbounded as logits grow.
template <typename Scalar>
double bce_from_logits(const Tensor<Scalar>& logits, const Tensor<Scalar>& targets);

}  // namespace stoneseg::nn
