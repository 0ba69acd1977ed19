#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stoneseg/annotations.hpp"
#include "stoneseg/metrics.hpp"
#include "stoneseg/nn/checkpoint.hpp"
#include "stoneseg/nn/model.hpp"

namespace stoneseg {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view name);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 4;
  int epochs = 10;
  std::int64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::optional<int> validation_interval;  // steps; defaults to one pass per epoch
  std::optional<std::filesystem::path> warm_start;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ExperimentRecord {
  std::string run_id;
  std::int64_t step = 0;
  int epoch = 0;  // 1-based
  Split split = Split::train;
  double dice = 0.0;
  double bce = 0.0;
  TrainConfig config;
};

nlohmann::json to_json(const ExperimentRecord& record);

/// `<arch>-<lr>-<batch>-<seed>`, e.g. "unetpp_plain-0.001-4-7".
std::string make_run_id(const nn::ModelConfig& model, const TrainConfig& cfg);

/// Append-only JSON Lines sink; safe for concurrent writers.
class JsonlLog {
 public:
  explicit JsonlLog(const std::filesystem::path& path);
  void append(const ExperimentRecord& record);

 private:
  std::mutex mutex_;
  std::ofstream out_;
};

using RecordSink = std::function<void(const ExperimentRecord&)>;

/// ceil(dataset_length / batch_size) * epochs; throws ConfigError on
/// non-positive input.
std::int64_t total_steps(std::int64_t dataset_length, std::int64_t batch_size, std::int64_t epochs);

/// Shuffled partition of [0, count) into batches, seeded with seed ^ epoch.
/// The last batch may be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, std::int64_t seed, int epoch);

std::vector<std::vector<DatasetEntry>> make_batches(const DatasetIndex& index, Split split, int batch_size,
                                                    std::int64_t seed, int epoch);

/// Frames and masks held in memory.
struct SampleSet {
  std::vector<RgbImage> frames;
  std::vector<BinaryMask> masks;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
};

SampleSet load_samples(const DatasetIndex& index, Split split);

struct TrainResult {
  nn::Checkpoint checkpoint;
  std::vector<ExperimentRecord> records;
  std::optional<double> best_val_dice;
};

/// Mini-batch training. Logs one train record per step and, every
/// validation_interval steps, one val record computed forward-only.
/// Throws DivergedError on a non-finite or > 100 loss. A warm-started
/// checkpoint's step count continues from the prior checkpoint's; record
/// steps restart at 1.
TrainResult train_model(const nn::ModelConfig& model, const TrainConfig& cfg, const SampleSet& train,
                        const SampleSet* val = nullptr, const RecordSink& sink = {});

/// Loads the train split (and val split when present) from disk.
TrainResult train_model(const nn::ModelConfig& model, const TrainConfig& cfg, const DatasetIndex& data,
                        const RecordSink& sink = {});

struct GridSpec {
  std::vector<double> learning_rates;
  std::vector<int> batch_sizes;
  int seeds_per_cell = 1;

  void validate() const;
};

struct GridCell {
  std::string run_id;
  TrainConfig config;
  std::optional<double> max_val_dice;
  bool diverged = false;
  std::string error;
};

struct GridResult {
  TrainConfig best;
  std::vector<GridCell> cells;
  std::vector<ExperimentRecord> records;
  nn::Checkpoint best_checkpoint;
};

/// Trains every (lr, batch, seed) cell; seeds are base.seed + k. The winner
/// has the highest max validation Dice; ties go to the lower learning rate,
/// then the smaller batch, then the lower seed. Diverged cells are marked
/// and skipped.
GridResult grid_search(const nn::ModelConfig& model, const GridSpec& grid, const TrainConfig& base,
                       const SampleSet& train, const SampleSet& val, const RecordSink& sink = {});

/// Probability maps for a set of frames, forward-only.
std::vector<ProbabilityMap<float>> predict(const nn::Checkpoint& ckpt, const std::vector<RgbImage>& frames);

/// Per-frame metrics averaged over the set, with pooled AUC alongside.
MetricReport evaluate_model(const nn::Checkpoint& ckpt, const SampleSet& data);
MetricReport evaluate_model(const nn::Checkpoint& ckpt, const DatasetIndex& data, Split split = Split::test);

/// First validation step whose Dice reaches `target`.
std::optional<std::int64_t> steps_to_dice(const std::vector<ExperimentRecord>& records, double target);

}  // namespace stoneseg
