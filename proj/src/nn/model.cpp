#include "stoneseg/nn/model.hpp"

#include <cmath>
#include <random>
#include <set>

namespace stoneseg::nn {

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::plain:
      return "plain";
    case BlockKind::residual:
      return "residual";
    case BlockKind::dense:
      return "dense";
  }
  return "plain";
}

BlockKind block_kind_from_string(std::string_view name) {
  if (name == "plain") return BlockKind::plain;
  if (name == "residual") return BlockKind::residual;
  if (name == "dense") return BlockKind::dense;
  throw ConfigError("unknown block_kind '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (depth < 1) throw ConfigError("model config: depth must be >= 1");
  if (depth > 8) throw ConfigError("model config: depth must be <= 8");
  if (base_channels < 1) throw ConfigError("model config: base_channels must be >= 1");
  if (input_channels < 1) throw ConfigError("model config: input_channels must be >= 1");
  if (output_channels != 1) throw ConfigError("model config: output_channels must be 1");
  const int factor = 1 << depth;
  if (input_height < factor || input_width < factor || input_height % factor != 0 || input_width % factor != 0) {
    throw ConfigError("model config: input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                      " is not divisible by 2^depth = " + std::to_string(factor));
  }
  if (dense.has_value() != (block_kind == BlockKind::dense)) {
    throw ConfigError("model config: dense settings must be present exactly when block_kind is dense");
  }
  if (dense && (dense->growth_rate < 1 || dense->layers_per_block < 1)) {
    throw ConfigError("model config: growth_rate and dense_layers_per_block must be >= 1");
  }
}

std::string ModelConfig::arch_name() const {
  return std::string(nested_skips ? "unetpp_" : "unet_") + std::string(to_string(block_kind));
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j{{"block_kind", std::string(to_string(c.block_kind))},
                   {"depth", c.depth},
                   {"base_channels", c.base_channels},
                   {"nested_skips", c.nested_skips},
                   {"use_norm", c.use_norm},
                   {"normalize_input", c.normalize_input},
                   {"input_channels", c.input_channels},
                   {"output_channels", c.output_channels},
                   {"input_height", c.input_height},
                   {"input_width", c.input_width}};
  if (c.dense) {
    j["growth_rate"] = c.dense->growth_rate;
    j["dense_layers_per_block"] = c.dense->layers_per_block;
  }
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "block_kind",     "depth",          "base_channels", "nested_skips", "use_norm",   "normalize_input",
      "input_channels", "output_channels", "input_height", "input_width",  "growth_rate", "dense_layers_per_block"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError("model config: unknown key '" + item.key() + "'");
  }
  ModelConfig c;
  try {
    if (j.contains("block_kind")) c.block_kind = block_kind_from_string(j.at("block_kind").get<std::string>());
    c.depth = j.value("depth", c.depth);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.nested_skips = j.value("nested_skips", c.nested_skips);
    c.use_norm = j.value("use_norm", c.use_norm);
    c.normalize_input = j.value("normalize_input", c.normalize_input);
    c.input_channels = j.value("input_channels", c.input_channels);
    c.output_channels = j.value("output_channels", c.output_channels);
    c.input_height = j.value("input_height", c.input_height);
    c.input_width = j.value("input_width", c.input_width);
    if (c.block_kind == BlockKind::dense) {
      DenseSettings d;
      d.growth_rate = j.value("growth_rate", d.growth_rate);
      d.layers_per_block = j.value("dense_layers_per_block", d.layers_per_block);
      c.dense = d;
    } else if (j.contains("growth_rate") || j.contains("dense_layers_per_block")) {
      throw ConfigError("model config: dense settings given for a non-dense block_kind");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

class GraphBuilder {
 public:
  explicit GraphBuilder(const ModelConfig& config) : config_(config) { channels_.push_back(config.input_channels); }

  int input() const { return 0; }
  int channels(int value) const { return channels_[static_cast<std::size_t>(value)]; }

  int add(LayerKind kind, std::string name, std::vector<int> inputs, int out_channels) {
    const int out = net_.value_count++;
    channels_.push_back(out_channels);
    net_.nodes.push_back({kind, std::move(name), std::move(inputs), out});
    return out;
  }

  int conv(LayerKind kind, const std::string& name, int in, int out_channels) {
    const int k = kind == LayerKind::conv3x3 ? 3 : 1;
    const int in_channels = channels(in);
    net_.params.push_back({name + ".weight", {out_channels, in_channels, k, k}, in_channels * k * k, false});
    net_.params.push_back({name + ".bias", {out_channels, 1, 1, 1}, 0, false});
    return add(kind, name, {in}, out_channels);
  }

  int maybe_norm(const std::string& conv_name, int in) {
    if (!config_.use_norm) return in;
    const std::string name = conv_name + ".norm";
    const int c = channels(in);
    net_.params.push_back({name + ".weight", {c, 1, 1, 1}, 0, true});
    net_.params.push_back({name + ".bias", {c, 1, 1, 1}, 0, false});
    return add(LayerKind::norm, name, {in}, c);
  }

  int relu(const std::string& name, int in) { return add(LayerKind::relu, name + ".relu", {in}, channels(in)); }

  int conv_norm_relu(LayerKind kind, const std::string& name, int in, int out_channels) {
    return relu(name, maybe_norm(name, conv(kind, name, in, out_channels)));
  }

  int concat(const std::string& name, const std::vector<int>& inputs) {
    if (inputs.size() == 1) return inputs.front();
    int c = 0;
    for (int v : inputs) c += channels(v);
    return add(LayerKind::concat, name, inputs, c);
  }

  int block(const std::string& name, int in, int out_channels) {
    switch (config_.block_kind) {
      case BlockKind::plain: {
        const int a = conv_norm_relu(LayerKind::conv3x3, name + ".conv1", in, out_channels);
        return conv_norm_relu(LayerKind::conv3x3, name + ".conv2", a, out_channels);
      }
      case BlockKind::residual: {
        const int a = conv_norm_relu(LayerKind::conv3x3, name + ".conv1", in, out_channels);
        const int b = maybe_norm(name + ".conv2", conv(LayerKind::conv3x3, name + ".conv2", a, out_channels));
        const int skip = channels(in) == out_channels ? in : conv(LayerKind::conv1x1, name + ".proj", in, out_channels);
        return relu(name, add(LayerKind::add, name + ".add", {b, skip}, out_channels));
      }
      case BlockKind::dense: {
        std::vector<int> features{in};
        for (int l = 0; l < config_.dense->layers_per_block; ++l) {
          const std::string layer = name + ".layer" + std::to_string(l + 1);
          const int joined = concat(layer + ".concat", features);
          features.push_back(conv_norm_relu(LayerKind::conv3x3, layer, joined, config_.dense->growth_rate));
        }
        const int joined = concat(name + ".concat", features);
        return conv_norm_relu(LayerKind::conv1x1, name + ".transition", joined, out_channels);
      }
    }
    return in;
  }

  Network finish(int logits) {
    net_.logits = logits;
    return std::move(net_);
  }

 private:
  const ModelConfig& config_;
  Network net_;
  std::vector<int> channels_;
};

std::string node_name(int i, int j) { return "x" + std::to_string(i) + "_" + std::to_string(j); }

}  // namespace

Network build_network(const ModelConfig& config) {
  config.validate();
  GraphBuilder g(config);
  const int depth = config.depth;
  // x[i][j]: level i (resolution / 2^i), column j (0 = encoder).
  std::vector<std::vector<int>> x(static_cast<std::size_t>(depth + 1), std::vector<int>(static_cast<std::size_t>(depth + 1), -1));
  const auto at = [&](int i, int j) -> int& { return x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]; };
  const auto level_channels = [&](int i) { return config.base_channels << i; };

  int v = g.input();
  for (int i = 0; i <= depth; ++i) {
    at(i, 0) = g.block(node_name(i, 0), v, level_channels(i));
    if (i < depth) v = g.add(LayerKind::maxpool2, node_name(i, 0) + ".pool", {at(i, 0)}, g.channels(at(i, 0)));
  }
  for (int j = 1; j <= depth; ++j) {
    for (int i = 0; i + j <= depth; ++i) {
      if (!config.nested_skips && i + j != depth) continue;
      const std::string name = node_name(i, j);
      std::vector<int> inputs;
      if (config.nested_skips) {
        for (int k = 0; k < j; ++k) inputs.push_back(at(i, k));
      } else {
        inputs.push_back(at(i, 0));
      }
      const int deeper = at(i + 1, j - 1);
      inputs.push_back(g.add(LayerKind::upsample2, name + ".up", {deeper}, g.channels(deeper)));
      at(i, j) = g.block(name, g.concat(name + ".concat", inputs), level_channels(i));
    }
  }
  const int logits = g.conv(LayerKind::conv1x1, "head", at(0, depth), config.output_channels);
  return g.finish(logits);
}

template <typename Scalar>
Parameters<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  const Network net = build_network(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Parameters<Scalar> params;
  for (const ParamSpec& spec : net.params) {
    Tensor<Scalar> t(spec.shape);
    if (spec.is_scale) {
      t.values().setOnes();
    } else if (spec.fan_in > 0) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
      for (Index k = 0; k < t.size(); ++k) t.values()[k] = static_cast<Scalar>(stddev * normal(rng));
    }
    params.emplace(spec.name, std::move(t));
  }
  return params;
}

Index parameter_count(const ModelConfig& config) {
  Index total = 0;
  for (const ParamSpec& spec : build_network(config).params) total += Tensor<float>::count(spec.shape);
  return total;
}

template <typename Scalar>
void validate_parameters(const ModelConfig& config, const Parameters<Scalar>& params) {
  const Network net = build_network(config);
  if (net.params.size() != params.size()) {
    throw CheckpointError(CheckpointError::Reason::shape_mismatch,
                          "parameter count " + std::to_string(params.size()) + " does not match config (" +
                              std::to_string(net.params.size()) + ")");
  }
  for (const ParamSpec& spec : net.params) {
    const auto it = params.find(spec.name);
    if (it == params.end()) {
      throw CheckpointError(CheckpointError::Reason::shape_mismatch, "missing parameter '" + spec.name + "'");
    }
    if (it->second.shape() != spec.shape) {
      throw CheckpointError(CheckpointError::Reason::shape_mismatch,
                            "parameter '" + spec.name + "' has shape " + to_string(it->second.shape()) +
                                ", config expects " + to_string(spec.shape));
    }
  }
}

namespace {

template <typename Scalar>
LayerParams<Scalar> params_for(const Node& node, const Parameters<Scalar>& params) {
  if (node.kind != LayerKind::conv3x3 && node.kind != LayerKind::conv1x1 && node.kind != LayerKind::norm) return {};
  const auto w = params.find(node.name + ".weight");
  const auto b = params.find(node.name + ".bias");
  if (w == params.end() || b == params.end()) throw ShapeError("missing parameters for layer '" + node.name + "'");
  return {&w->second, &b->second};
}

template <typename Scalar>
Tensor<Scalar> standardize(const Tensor<Scalar>& input) {
  Tensor<Scalar> out(input.shape());
  for (Index n = 0; n < input.batch(); ++n) {
    const auto x = input.sample(n).array();
    const Scalar mean = x.mean();
    const Scalar stddev = std::sqrt((x - mean).square().mean());
    out.sample(n).array() = (x - mean) / (stddev + Scalar(1e-6));
  }
  return out;
}

}  // namespace

template <typename Scalar>
ForwardPass<Scalar> forward_pass(const Network& net, const ModelConfig& config, const Parameters<Scalar>& params,
                                 const Tensor<Scalar>& input) {
  const Shape expected{input.batch(), config.input_channels, config.input_height, config.input_width};
  if (input.shape() != expected || input.batch() < 1) {
    throw ShapeError("model input " + to_string(input.shape()) + " does not match config " + to_string(expected));
  }
  if (!input.all_finite()) throw NonFiniteError("non-finite values in model input");

  ForwardPass<Scalar> pass;
  pass.values.resize(static_cast<std::size_t>(net.value_count));
  pass.values[0] = config.normalize_input ? standardize(input) : input;
  std::vector<const Tensor<Scalar>*> inputs;
  for (const Node& node : net.nodes) {
    inputs.clear();
    for (int v : node.inputs) inputs.push_back(&pass.values[static_cast<std::size_t>(v)]);
    Tensor<Scalar> out = layer_apply<Scalar>(node.kind, params_for(node, params), inputs, node.name);
    if (!out.all_finite()) {
      throw NonFiniteError("non-finite values after layer '" + node.name + "' (" + std::string(to_string(node.kind)) +
                           ")");
    }
    pass.values[static_cast<std::size_t>(node.output)] = std::move(out);
  }
  pass.probabilities = layer_apply<Scalar>(LayerKind::sigmoid, {}, pass.values[static_cast<std::size_t>(net.logits)]);
  return pass;
}

template <typename Scalar>
Tensor<Scalar> forward(const ModelConfig& config, const Parameters<Scalar>& params, const Tensor<Scalar>& input) {
  return forward_pass(build_network(config), config, params, input).probabilities;
}

template <typename Scalar>
Scalar bce_loss(const Tensor<Scalar>& probabilities, const Tensor<Scalar>& targets) {
  if (probabilities.shape() != targets.shape()) {
    throw ShapeError("bce: probabilities " + to_string(probabilities.shape()) + " vs targets " +
                     to_string(targets.shape()));
  }
  constexpr double eps = 1e-7;
  const auto p = probabilities.values().array().template cast<double>().max(eps).min(1.0 - eps);
  const auto y = targets.values().array().template cast<double>();
  return static_cast<Scalar>(-(y * p.log() + (1.0 - y) * (1.0 - p).log()).mean());
}

template <typename Scalar>
double bce_from_logits(const Tensor<Scalar>& logits, const Tensor<Scalar>& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce: logits " + to_string(logits.shape()) + " vs targets " + to_string(targets.shape()));
  }
  const auto z = logits.values().array().template cast<double>();
  const auto y = targets.values().array().template cast<double>();
  return (z.max(0.0) - z * y + (-z.abs()).exp().log1p()).mean();
}

template <typename Scalar>
BackwardResult<Scalar> backward(const ModelConfig& config, const Parameters<Scalar>& params,
                                const Tensor<Scalar>& input, const Tensor<Scalar>& targets) {
  const Network net = build_network(config);
  ForwardPass<Scalar> pass = forward_pass(net, config, params, input);
  BackwardResult<Scalar> result;
  result.loss = bce_loss(pass.probabilities, targets);
  result.logit_loss = bce_from_logits(pass.values[static_cast<std::size_t>(net.logits)], targets);

  std::vector<Tensor<Scalar>> grads(static_cast<std::size_t>(net.value_count));
  grads[static_cast<std::size_t>(net.logits)] =
      Tensor<Scalar>(targets.shape(), (pass.probabilities.values() - targets.values()) / static_cast<Scalar>(targets.size()));

  std::vector<const Tensor<Scalar>*> inputs;
  for (auto it = net.nodes.rbegin(); it != net.nodes.rend(); ++it) {
    const Node& node = *it;
    Tensor<Scalar>& upstream = grads[static_cast<std::size_t>(node.output)];
    if (upstream.empty()) continue;
    inputs.clear();
    for (int v : node.inputs) inputs.push_back(&pass.values[static_cast<std::size_t>(v)]);
    const LayerParams<Scalar> lp = params_for(node, params);
    LayerGradients<Scalar> g = layer_grad<Scalar>(node.kind, lp, inputs, pass.values[static_cast<std::size_t>(node.output)],
                                                  upstream, node.name);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto v = static_cast<std::size_t>(node.inputs[k]);
      if (v == 0) continue;
      if (grads[v].empty()) {
        grads[v] = std::move(g.inputs[k]);
      } else {
        grads[v].values() += g.inputs[k].values();
      }
    }
    if (lp.weight) {
      result.grads.emplace(node.name + ".weight", std::move(g.weight));
      result.grads.emplace(node.name + ".bias", std::move(g.bias));
    }
    upstream = Tensor<Scalar>();
    pass.values[static_cast<std::size_t>(node.output)] = Tensor<Scalar>();
  }
  result.probabilities = std::move(pass.probabilities);
  return result;
}

#define STONESEG_INSTANTIATE_MODEL(Scalar)                                                                         \
  template Parameters<Scalar> build_model<Scalar>(const ModelConfig&, std::uint64_t);                             \
  template void validate_parameters<Scalar>(const ModelConfig&, const Parameters<Scalar>&);                      \
  template ForwardPass<Scalar> forward_pass<Scalar>(const Network&, const ModelConfig&, const Parameters<Scalar>&, \
                                                    const Tensor<Scalar>&);                                        \
  template Tensor<Scalar> forward<Scalar>(const ModelConfig&, const Parameters<Scalar>&, const Tensor<Scalar>&);   \
  template Scalar bce_loss<Scalar>(const Tensor<Scalar>&, const Tensor<Scalar>&);                                   \
  template double bce_from_logits<Scalar>(const Tensor<Scalar>&, const Tensor<Scalar>&);                            \
  template BackwardResult<Scalar> backward<Scalar>(const ModelConfig&, const Parameters<Scalar>&,                  \
                                                   const Tensor<Scalar>&, const Tensor<Scalar>&);

STONESEG_INSTANTIATE_MODEL(float)
STONESEG_INSTANTIATE_MODEL(double)

}  // namespace stoneseg::nn
