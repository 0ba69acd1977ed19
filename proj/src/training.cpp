#include "stoneseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "stoneseg/errors.hpp"
#include "stoneseg/image_io.hpp"
#include "stoneseg/nn/convert.hpp"

namespace stoneseg {

using nlohmann::json;

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("train config: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (validation_interval && *validation_interval < 1) throw ConfigError("train config: validation_interval must be >= 1");
}

json to_json(const TrainConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"optimizer", std::string(to_string(cfg.optimizer))},
          {"validation_interval", cfg.validation_interval ? json(*cfg.validation_interval) : json(nullptr)},
          {"warm_start", cfg.warm_start ? json(cfg.warm_start->string()) : json(nullptr)}};
}

TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> known = {"learning_rate", "batch_size", "epochs", "seed",
                                              "optimizer",     "validation_interval", "warm_start"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError("train config: unknown key '" + item.key() + "'");
  }
  TrainConfig cfg;
  try {
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("optimizer")) cfg.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
    if (j.contains("validation_interval") && !j.at("validation_interval").is_null()) {
      cfg.validation_interval = j.at("validation_interval").get<int>();
    }
    if (j.contains("warm_start") && !j.at("warm_start").is_null()) {
      cfg.warm_start = j.at("warm_start").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

json to_json(const ExperimentRecord& r) {
  json j{{"run_id", r.run_id},
         {"step", r.step},
         {"epoch", r.epoch},
         {"split", std::string(to_string(r.split))},
         {"dice", r.dice},
         {"bce", r.bce}};
  const json config = to_json(r.config);
  for (const auto& item : config.items()) j[item.key()] = item.value();
  return j;
}

std::string make_run_id(const nn::ModelConfig& model, const TrainConfig& cfg) {
  char lr[32];
  std::snprintf(lr, sizeof lr, "%g", cfg.learning_rate);
  return model.arch_name() + "-" + lr + "-" + std::to_string(cfg.batch_size) + "-" + std::to_string(cfg.seed);
}

JsonlLog::JsonlLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw DataError("cannot open log " + path.string());
}

void JsonlLog::append(const ExperimentRecord& record) {
  const std::string line = to_json(record).dump();
  std::lock_guard lock(mutex_);
  out_ << line << '\n';
  out_.flush();
}

std::int64_t total_steps(std::int64_t dataset_length, std::int64_t batch_size, std::int64_t epochs) {
  if (dataset_length < 1 || batch_size < 1 || epochs < 1) {
    throw ConfigError("total_steps: dataset length, batch size and epochs must all be >= 1");
  }
  return (dataset_length + batch_size - 1) / batch_size * epochs;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, std::int64_t seed, int epoch) {
  if (count == 0) throw DataError("make_batches: empty split");
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(static_cast<std::uint64_t>(seed) ^ static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(count, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::vector<DatasetEntry>> make_batches(const DatasetIndex& index, Split split, int batch_size,
                                                    std::int64_t seed, int epoch) {
  const std::vector<DatasetEntry> entries = index.select(split);
  std::vector<std::vector<DatasetEntry>> out;
  for (const auto& batch : make_batches(entries.size(), batch_size, seed, epoch)) {
    auto& b = out.emplace_back();
    for (std::size_t i : batch) b.push_back(entries[i]);
  }
  return out;
}

SampleSet load_samples(const DatasetIndex& index, Split split) {
  SampleSet set;
  for (const DatasetEntry& e : index.select(split)) {
    set.frames.push_back(read_rgb(index.root / e.frame_path));
    set.masks.push_back(read_mask(index.root / e.mask_path));
    if (set.masks.back().rows() != set.frames.back().height || set.masks.back().cols() != set.frames.back().width) {
      throw DataError("mask size does not match frame: " + e.mask_path);
    }
  }
  return set;
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;
constexpr double kDivergedLoss = 100.0;
constexpr std::size_t kEvalBatch = 8;

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(static_cast<float>(lr)) {}

  void step(nn::Parameters<float>& params, const nn::Parameters<float>& grads) {
    ++t_;
    const float correction1 = 1.0f - static_cast<float>(std::pow(kAdamBeta1, t_));
    const float correction2 = 1.0f - static_cast<float>(std::pow(kAdamBeta2, t_));
    for (auto& [name, p] : params) {
      const auto g = grads.at(name).values().array();
      if (kind_ == OptimizerKind::sgd) {
        p.values().array() -= lr_ * g;
        continue;
      }
      auto [it, inserted] = moments_.try_emplace(name);
      if (inserted) {
        it->second.first = nn::Tensor<float>(p.shape());
        it->second.second = nn::Tensor<float>(p.shape());
      }
      auto m = it->second.first.values().array();
      auto v = it->second.second.values().array();
      m = static_cast<float>(kAdamBeta1) * m + static_cast<float>(1.0 - kAdamBeta1) * g;
      v = static_cast<float>(kAdamBeta2) * v + static_cast<float>(1.0 - kAdamBeta2) * g.square();
      p.values().array() -= lr_ * (m / correction1) / ((v / correction2).sqrt() + static_cast<float>(kAdamEpsilon));
    }
  }

 private:
  OptimizerKind kind_;
  float lr_;
  int t_ = 0;
  std::map<std::string, std::pair<nn::Tensor<float>, nn::Tensor<float>>> moments_;
};

struct BatchTensors {
  nn::Tensor<float> inputs;
  nn::Tensor<float> targets;
};

BatchTensors gather(const SampleSet& set, const std::vector<std::size_t>& idx, int channels) {
  std::vector<const RgbImage*> frames;
  std::vector<const BinaryMask*> masks;
  for (std::size_t i : idx) {
    frames.push_back(&set.frames[i]);
    masks.push_back(&set.masks[i]);
  }
  return {nn::images_to_tensor<float>(frames, channels), nn::masks_to_tensor<float>(masks)};
}

double mean_dice(const nn::Tensor<float>& probabilities, const nn::Tensor<float>& targets) {
  double sum = 0.0;
  for (nn::Index n = 0; n < probabilities.batch(); ++n) {
    sum += dice(predict_mask(probabilities.plane(n, 0)), targets.plane(n, 0));
  }
  return sum / static_cast<double>(probabilities.batch());
}

void check_frames(const nn::ModelConfig& model, const SampleSet& set, const char* what) {
  for (const RgbImage& f : set.frames) {
    if (f.width != model.input_width || f.height != model.input_height) {
      throw DataError(std::string(what) + " frame is " + std::to_string(f.width) + "x" + std::to_string(f.height) +
                      ", model expects " + std::to_string(model.input_width) + "x" + std::to_string(model.input_height));
    }
  }
}

// Mean per-frame Dice and BCE over a sample set, forward-only.
std::pair<double, double> validate(const nn::ModelConfig& model, const nn::Network& net,
                                   const nn::Parameters<float>& params, const SampleSet& set) {
  double dice_sum = 0.0;
  double bce_sum = 0.0;
  for (std::size_t start = 0; start < set.size(); start += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(set.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const BatchTensors b = gather(set, idx, model.input_channels);
    const nn::Tensor<float> prob = nn::forward_pass(net, model, params, b.inputs).probabilities;
    for (nn::Index n = 0; n < prob.batch(); ++n) {
      dice_sum += dice(predict_mask(prob.plane(n, 0)), b.targets.plane(n, 0));
      bce_sum += bce(prob.plane(n, 0), b.targets.plane(n, 0));
    }
  }
  const auto count = static_cast<double>(set.size());
  return {dice_sum / count, bce_sum / count};
}

}  // namespace

TrainResult train_model(const nn::ModelConfig& model, const TrainConfig& cfg, const SampleSet& train,
                        const SampleSet* val, const RecordSink& sink) {
  model.validate();
  cfg.validate();
  if (train.empty()) throw DataError("train_model: empty training split");
  check_frames(model, train, "training");
  if (val && !val->empty()) check_frames(model, *val, "validation");
  const bool has_val = val && !val->empty();

  TrainResult result;
  result.checkpoint.config = model;
  nn::Parameters<float>& params = result.checkpoint.parameters;
  std::int64_t prior_steps = 0;
  if (cfg.warm_start) {
    nn::Checkpoint prior = nn::read_checkpoint(*cfg.warm_start);
    if (!(prior.config == model)) {
      throw CheckpointError(CheckpointError::Reason::shape_mismatch,
                            "warm start checkpoint config does not match the model config");
    }
    params = std::move(prior.parameters);
    prior_steps = prior.training_steps_completed;
  } else {
    params = nn::build_model<float>(model, static_cast<std::uint64_t>(cfg.seed));
  }

  const nn::Network net = nn::build_network(model);
  const std::string run_id = make_run_id(model, cfg);
  const std::int64_t steps_per_epoch = total_steps(static_cast<std::int64_t>(train.size()), cfg.batch_size, 1);
  const int interval = cfg.validation_interval.value_or(static_cast<int>(steps_per_epoch));
  Optimizer optimizer(cfg.optimizer, cfg.learning_rate);

  const auto emit = [&](std::int64_t at, int ep, Split split, double dice, double bce) {
    ExperimentRecord r{run_id, at, ep, split, dice, bce, cfg};
    if (sink) sink(r);
    result.records.push_back(std::move(r));
  };

  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& batch : make_batches(train.size(), cfg.batch_size, cfg.seed, epoch)) {
      ++step;
      const BatchTensors b = gather(train, batch, model.input_channels);
      nn::BackwardResult<float> br;
      try {
        br = nn::backward(model, params, b.inputs, b.targets);
      } catch (const NonFiniteError& e) {
        throw DivergedError("run " + run_id + " diverged at step " + std::to_string(step) + ": " + e.what());
      }
      // The logged BCE is clamped below ~16.1, so the threshold applies to the
      // unclamped value.
      if (!std::isfinite(br.logit_loss) || br.logit_loss > kDivergedLoss) {
        throw DivergedError("run " + run_id + " diverged at step " + std::to_string(step) + ": loss " +
                            std::to_string(br.logit_loss));
      }
      emit(step, epoch, Split::train, mean_dice(br.probabilities, b.targets), br.loss);
      optimizer.step(params, br.grads);

      if (has_val && step % interval == 0) {
        std::pair<double, double> v;
        try {
          v = validate(model, net, params, *val);
        } catch (const NonFiniteError& e) {
          throw DivergedError("run " + run_id + " diverged at step " + std::to_string(step) + ": " + e.what());
        }
        result.best_val_dice = std::max(result.best_val_dice.value_or(0.0), v.first);
        emit(step, epoch, Split::val, v.first, v.second);
      }
    }
  }
  result.checkpoint.training_steps_completed = prior_steps + step;
  return result;
}

TrainResult train_model(const nn::ModelConfig& model, const TrainConfig& cfg, const DatasetIndex& data,
                        const RecordSink& sink) {
  const SampleSet train = load_samples(data, Split::train);
  const SampleSet val = load_samples(data, Split::val);
  return train_model(model, cfg, train, val.empty() ? nullptr : &val, sink);
}

void GridSpec::validate() const {
  if (learning_rates.empty() || batch_sizes.empty()) throw ConfigError("grid: learning_rates and batch_sizes must be non-empty");
  if (seeds_per_cell < 1) throw ConfigError("grid: seeds_per_cell must be >= 1");
}

GridResult grid_search(const nn::ModelConfig& model, const GridSpec& grid, const TrainConfig& base,
                       const SampleSet& train, const SampleSet& val, const RecordSink& sink) {
  grid.validate();
  if (val.empty()) throw DataError("grid_search: a validation split is required to rank cells");

  GridResult result;
  const GridCell* best = nullptr;
  std::optional<nn::Checkpoint> best_ckpt;
  const auto better = [](const GridCell& a, const GridCell& b) {
    if (*a.max_val_dice != *b.max_val_dice) return *a.max_val_dice > *b.max_val_dice;
    if (a.config.learning_rate != b.config.learning_rate) return a.config.learning_rate < b.config.learning_rate;
    if (a.config.batch_size != b.config.batch_size) return a.config.batch_size < b.config.batch_size;
    return a.config.seed < b.config.seed;
  };

  result.cells.reserve(grid.learning_rates.size() * grid.batch_sizes.size() * static_cast<std::size_t>(grid.seeds_per_cell));
  for (double lr : grid.learning_rates) {
    for (int batch : grid.batch_sizes) {
      for (int k = 0; k < grid.seeds_per_cell; ++k) {
        TrainConfig cfg = base;
        cfg.learning_rate = lr;
        cfg.batch_size = batch;
        cfg.seed = base.seed + k;
        GridCell cell{make_run_id(model, cfg), cfg, std::nullopt, false, {}};
        try {
          TrainResult run = train_model(model, cfg, train, &val, sink);
          result.records.insert(result.records.end(), run.records.begin(), run.records.end());
          cell.max_val_dice = run.best_val_dice.value_or(0.0);
          result.cells.push_back(cell);
          if (!best || better(result.cells.back(), *best)) {
            best = &result.cells.back();
            best_ckpt = std::move(run.checkpoint);
          }
        } catch (const DivergedError& e) {
          cell.diverged = true;
          cell.error = e.what();
          result.cells.push_back(cell);
        }
      }
    }
  }
  if (!best) throw DivergedError("grid_search: every cell diverged");
  result.best = best->config;
  result.best_checkpoint = std::move(*best_ckpt);
  return result;
}

std::vector<ProbabilityMap<float>> predict(const nn::Checkpoint& ckpt, const std::vector<RgbImage>& frames) {
  const nn::Network net = nn::build_network(ckpt.config);
  std::vector<ProbabilityMap<float>> out;
  out.reserve(frames.size());
  for (std::size_t start = 0; start < frames.size(); start += kEvalBatch) {
    std::vector<const RgbImage*> batch;
    for (std::size_t i = start; i < std::min(frames.size(), start + kEvalBatch); ++i) batch.push_back(&frames[i]);
    const nn::Tensor<float> prob =
        nn::forward_pass(net, ckpt.config, ckpt.parameters, nn::images_to_tensor<float>(batch, ckpt.config.input_channels))
            .probabilities;
    for (nn::Index n = 0; n < prob.batch(); ++n) out.emplace_back(prob.plane(n, 0));
  }
  return out;
}

MetricReport evaluate_model(const nn::Checkpoint& ckpt, const SampleSet& data) {
  if (data.empty()) throw DataError("evaluate_model: empty split");
  check_frames(ckpt.config, data, "evaluation");
  const std::vector<ProbabilityMap<float>> probs = predict(ckpt, data.frames);
  MetricAccumulator acc;
  for (std::size_t i = 0; i < probs.size(); ++i) acc.add(probs[i], data.masks[i]);
  return acc.report();
}

MetricReport evaluate_model(const nn::Checkpoint& ckpt, const DatasetIndex& data, Split split) {
  return evaluate_model(ckpt, load_samples(data, split));
}

std::optional<std::int64_t> steps_to_dice(const std::vector<ExperimentRecord>& records, double target) {
  for (const ExperimentRecord& r : records) {
    if (r.split == Split::val && r.dice >= target) return r.step;
  }
  return std::nullopt;
}

}  // namespace stoneseg
