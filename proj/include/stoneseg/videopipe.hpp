#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stoneseg/image.hpp"
#include "stoneseg/imaging.hpp"
#include "stoneseg/nn/checkpoint.hpp"

namespace stoneseg {

struct TimedFrame {
  RgbImage image;
  std::int64_t timestamp_ms = 0;
  std::size_t source_index = 0;  // position in the original source
};

/// Ordered frame stream. Implementations enforce non-decreasing timestamps
/// and a uniform frame size, throwing DataError otherwise.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<TimedFrame> next() = 0;
};

class MemorySource : public FrameSource {
 public:
  explicit MemorySource(std::vector<TimedFrame> frames);
  std::optional<TimedFrame> next() override;

 private:
  std::vector<TimedFrame> frames_;
  std::size_t pos_ = 0;
};

/// `frame_%06d.png` files plus `index.json` {"fps_nominal", "timestamps_ms"}.
/// Missing timestamps are derived from fps_nominal. Frames load lazily.
class DirectorySource : public FrameSource {
 public:
  explicit DirectorySource(std::filesystem::path dir);
  std::optional<TimedFrame> next() override;
  double fps_nominal() const { return fps_nominal_; }
  std::size_t size() const { return timestamps_.size(); }

 private:
  std::filesystem::path dir_;
  double fps_nominal_ = 0.0;
  std::vector<std::int64_t> timestamps_;
  std::size_t pos_ = 0;
  int width_ = 0;
  int height_ = 0;
};

/// Raw pipe: per frame "FRM0", u32 width, u32 height, u64 timestamp_ms, RGB bytes.
class PipeSource : public FrameSource {
 public:
  explicit PipeSource(std::istream& in);
  std::optional<TimedFrame> next() override;

 private:
  std::istream& in_;
  std::size_t pos_ = 0;
  std::int64_t last_ts_ = 0;
  int width_ = 0;
  int height_ = 0;
};

void write_pipe_frame(std::ostream& out, const RgbImage& image, std::int64_t timestamp_ms);
void write_frame_directory(const std::filesystem::path& dir, const std::vector<TimedFrame>& frames, double fps_nominal);

/// Picks the source frame nearest to each tick t0 + k*1000/fps (ties go to
/// the earlier frame) for every tick up to the last timestamp. A frame picked
/// for two consecutive ticks is emitted twice only when the source interval
/// around the tick is longer than the tick interval.
class ResampledSource : public FrameSource {
 public:
  ResampledSource(FrameSource& src, double target_fps = 20.0);
  std::optional<TimedFrame> next() override;

 private:
  bool pull();

  FrameSource& src_;
  double interval_ms_;
  std::optional<TimedFrame> cur_;
  std::optional<TimedFrame> ahead_;
  std::int64_t prev_ts_ = 0;  // timestamp of the frame before cur_
  bool has_prev_ = false;
  double t0_ = 0.0;
  std::int64_t tick_ = 0;
  std::optional<std::size_t> last_emitted_;
  bool started_ = false;
};

/// Throws DataError on an empty source.
std::vector<TimedFrame> resample_frames(std::vector<TimedFrame> frames, double target_fps = 20.0);

/// Blocking FIFO with fixed capacity; push blocks when full, pop blocks when
/// empty and returns nullopt once closed and drained.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(T value) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
};

inline constexpr std::size_t kPipelineDepth = 4;

/// Maps a letterboxed model input to a stone probability map of the same size.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual int input_width() const = 0;
  virtual int input_height() const = 0;
  virtual ProbabilityMap<float> predict(const RgbImage& input) const = 0;
};

/// Frozen checkpoint, shared read-only. `width`/`height` override the
/// inference resolution (the network is fully convolutional).
class ModelPredictor : public Predictor {
 public:
  explicit ModelPredictor(nn::Checkpoint ckpt, std::optional<int> width = {}, std::optional<int> height = {});
  int input_width() const override { return config_.input_width; }
  int input_height() const override { return config_.input_height; }
  ProbabilityMap<float> predict(const RgbImage& input) const override;

 private:
  nn::ModelConfig config_;
  nn::Parameters<float> params_;
  nn::Network net_;
};

/// Luma / 255 as the "probability"; isolates pipeline overhead.
class IdentityPredictor : public Predictor {
 public:
  IdentityPredictor(int width, int height) : width_(width), height_(height) {}
  int input_width() const override { return width_; }
  int input_height() const override { return height_; }
  ProbabilityMap<float> predict(const RgbImage& input) const override;

 private:
  int width_;
  int height_;
};

/// Linear blue-to-red: (floor(255p), 0, floor(255(1-p))), p clamped to [0,1].
std::array<std::uint8_t, 3> heat_color(double p);
RgbImage heat_map(const ProbabilityMap<float>& prob);

inline constexpr int kSeparatorWidth = 2;

/// input | gt | pred | heat with 2-pixel white separators; gt is optional.
/// Throws ShapeError on a dimension mismatch.
RgbImage compose_panel(const RgbImage& input, const BinaryMask* gt, const BinaryMask& pred, const RgbImage& heat);

struct FrameTiming {
  std::size_t index = 0;
  std::int64_t timestamp_ms = 0;
  double preprocess_ms = 0.0;
  double inference_ms = 0.0;
  double compose_ms = 0.0;
  double latency_ms = 0.0;  // preprocess start to panel handed to the sink
  double done_ms = 0.0;     // stream start to panel handed to the sink
};

struct FrameError {
  std::size_t index = 0;
  std::string message;
};

struct FpsReport {
  std::string mode;
  std::size_t frames = 0;
  double wall_seconds = 0.0;
  double mean_fps = 0.0;  // frames / wall time
  double mean_latency_ms = 0.0;
  double median_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  double median_fps = 0.0;  // 1000 / median gap between consecutive panels
  double mean_preprocess_ms = 0.0;
  double mean_inference_ms = 0.0;
  double mean_compose_ms = 0.0;
  std::vector<FrameTiming> timings;
  std::vector<FrameError> errors;
};

nlohmann::json to_json(const FpsReport& report, bool include_timings = false);

enum class PipelineMode { single_thread, pipelined };

struct PanelOutput {
  std::size_t index = 0;
  std::int64_t timestamp_ms = 0;
  RgbImage panel;
  ProbabilityMap<float> probability;  // at frame resolution
};

using PanelSink = std::function<void(const PanelOutput&)>;
/// Ground truth for the frame at a given source index, if any.
using GroundTruth = std::function<std::optional<BinaryMask>(std::size_t)>;

/// preprocess (auto-crop, letterbox) -> infer -> compose. Frames that cannot
/// be cropped use the full frame; failures are recorded per frame and the
/// frame still yields a panel. Panels reach the sink in input order.
FpsReport annotate_stream(const Predictor& predictor, FrameSource& src, const GroundTruth& gt, const PanelSink& sink,
                          PipelineMode mode = PipelineMode::pipelined);

struct BenchSettings {
  int frame_size = 256;
  int n_frames = 300;
  PipelineMode mode = PipelineMode::pipelined;
  std::uint64_t seed = 0;
};

/// Synthetic frames are rendered up front so only the pipeline is timed.
FpsReport bench_throughput(const Predictor& predictor, const BenchSettings& settings);
std::vector<TimedFrame> bench_frames(int frame_size, int n_frames, std::uint64_t seed, double fps = 30.0);

/// "PMAP" | u32 width | u32 height | f32 LE row-major.
void write_pmap(std::ostream& out, const ProbabilityMap<float>& prob);
ProbabilityMap<float> read_pmap(std::istream& in);

}  // namespace stoneseg
