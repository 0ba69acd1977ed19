#include "stoneseg/videopipe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <thread>

#include "stoneseg/errors.hpp"
#include "stoneseg/image_io.hpp"
#include "stoneseg/nn/convert.hpp"
#include "stoneseg/synthdata.hpp"

namespace stoneseg {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t get_le(const unsigned char* p, int n) {
  std::uint64_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

// Reads exactly n bytes; returns the count actually read.
std::size_t read_bytes(std::istream& in, void* dst, std::size_t n) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount());
}

void check_frame(const TimedFrame& f, bool first, std::int64_t last_ts, int width, int height, const char* what) {
  if (!f.image.valid()) throw DataError(std::string(what) + ": invalid frame " + std::to_string(f.source_index));
  if (!first) {
    if (f.timestamp_ms < last_ts) {
      throw DataError(std::string(what) + ": timestamps decrease at frame " + std::to_string(f.source_index));
    }
    if (f.image.width != width || f.image.height != height) {
      throw DataError(std::string(what) + ": frame " + std::to_string(f.source_index) + " is " +
                      std::to_string(f.image.width) + "x" + std::to_string(f.image.height) + ", expected " +
                      std::to_string(width) + "x" + std::to_string(height));
    }
  }
}

}  // namespace

MemorySource::MemorySource(std::vector<TimedFrame> frames) : frames_(std::move(frames)) {
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    frames_[i].source_index = i;
    check_frame(frames_[i], i == 0, i ? frames_[i - 1].timestamp_ms : 0, frames_[0].image.width,
                frames_[0].image.height, "memory source");
  }
}

std::optional<TimedFrame> MemorySource::next() {
  if (pos_ >= frames_.size()) return std::nullopt;
  return frames_[pos_++];
}

DirectorySource::DirectorySource(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::ifstream in(dir_ / "index.json");
  if (!in) throw DataError("frame directory has no index.json: " + dir_.string());
  json j;
  try {
    j = json::parse(in);
    fps_nominal_ = j.value("fps_nominal", 0.0);
    if (j.contains("timestamps_ms")) {
      timestamps_ = j.at("timestamps_ms").get<std::vector<std::int64_t>>();
    } else if (j.contains("frame_count") && fps_nominal_ > 0.0) {
      const auto n = j.at("frame_count").get<std::size_t>();
      for (std::size_t i = 0; i < n; ++i) {
        timestamps_.push_back(std::llround(static_cast<double>(i) * 1000.0 / fps_nominal_));
      }
    } else {
      throw DataError("index.json needs timestamps_ms, or frame_count with fps_nominal");
    }
  } catch (const json::exception& e) {
    throw DataError("bad index.json in " + dir_.string() + ": " + e.what());
  }
  for (std::size_t i = 1; i < timestamps_.size(); ++i) {
    if (timestamps_[i] < timestamps_[i - 1]) throw DataError("index.json: timestamps decrease at frame " + std::to_string(i));
  }
}

std::optional<TimedFrame> DirectorySource::next() {
  if (pos_ >= timestamps_.size()) return std::nullopt;
  char name[32];
  std::snprintf(name, sizeof name, "frame_%06zu.png", pos_);
  TimedFrame f{read_rgb(dir_ / name), timestamps_[pos_], pos_};
  check_frame(f, pos_ == 0, pos_ ? timestamps_[pos_ - 1] : 0, width_, height_, "frame directory");
  width_ = f.image.width;
  height_ = f.image.height;
  ++pos_;
  return f;
}

PipeSource::PipeSource(std::istream& in) : in_(in) {}

std::optional<TimedFrame> PipeSource::next() {
  unsigned char header[20];
  const std::size_t got = read_bytes(in_, header, sizeof header);
  if (got == 0) return std::nullopt;
  if (got < sizeof header) throw DataError("frame pipe: truncated header at frame " + std::to_string(pos_));
  if (std::memcmp(header, "FRM0", 4) != 0) throw DataError("frame pipe: bad magic at frame " + std::to_string(pos_));
  const auto w = static_cast<std::uint32_t>(get_le(header + 4, 4));
  const auto h = static_cast<std::uint32_t>(get_le(header + 8, 4));
  if (w == 0 || h == 0 || w > 16384 || h > 16384) throw DataError("frame pipe: bad frame size at frame " + std::to_string(pos_));
  TimedFrame f;
  f.image = RgbImage(static_cast<int>(w), static_cast<int>(h));
  f.timestamp_ms = static_cast<std::int64_t>(get_le(header + 12, 8));
  f.source_index = pos_;
  if (read_bytes(in_, f.image.data.data(), f.image.data.size()) < f.image.data.size()) {
    throw DataError("frame pipe: truncated pixels at frame " + std::to_string(pos_));
  }
  check_frame(f, pos_ == 0, last_ts_, width_, height_, "frame pipe");
  width_ = f.image.width;
  height_ = f.image.height;
  last_ts_ = f.timestamp_ms;
  ++pos_;
  return f;
}

void write_pipe_frame(std::ostream& out, const RgbImage& image, std::int64_t timestamp_ms) {
  out.write("FRM0", 4);
  put_u32(out, static_cast<std::uint32_t>(image.width));
  put_u32(out, static_cast<std::uint32_t>(image.height));
  put_u64(out, static_cast<std::uint64_t>(timestamp_ms));
  out.write(reinterpret_cast<const char*>(image.data.data()), static_cast<std::streamsize>(image.data.size()));
}

void write_frame_directory(const std::filesystem::path& dir, const std::vector<TimedFrame>& frames, double fps_nominal) {
  std::filesystem::create_directories(dir);
  std::vector<std::int64_t> ts;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06zu.png", i);
    write_rgb(dir / name, frames[i].image);
    ts.push_back(frames[i].timestamp_ms);
  }
  std::ofstream out(dir / "index.json");
  if (!out) throw DataError("cannot write " + (dir / "index.json").string());
  out << json{{"fps_nominal", fps_nominal}, {"timestamps_ms", ts}}.dump() << '\n';
}

ResampledSource::ResampledSource(FrameSource& src, double target_fps) : src_(src), interval_ms_(1000.0 / target_fps) {
  if (!(target_fps > 0.0) || !std::isfinite(target_fps)) throw ConfigError("resample: target fps must be > 0");
}

bool ResampledSource::pull() {
  ahead_ = src_.next();
  return ahead_.has_value();
}

std::optional<TimedFrame> ResampledSource::next() {
  if (!started_) {
    started_ = true;
    cur_ = src_.next();
    if (!cur_) throw DataError("resample: empty source");
    t0_ = static_cast<double>(cur_->timestamp_ms);
    pull();
  }
  while (cur_) {
    const double tick = t0_ + static_cast<double>(tick_) * interval_ms_;
    while (ahead_ && static_cast<double>(ahead_->timestamp_ms) <= tick) {
      prev_ts_ = cur_->timestamp_ms;
      has_prev_ = true;
      cur_ = std::move(ahead_);
      pull();
    }
    if (!ahead_ && static_cast<double>(cur_->timestamp_ms) < tick) {
      cur_.reset();
      break;
    }
    const bool take_ahead =
        ahead_ && static_cast<double>(ahead_->timestamp_ms) - tick < tick - static_cast<double>(cur_->timestamp_ms);
    const TimedFrame& pick = take_ahead ? *ahead_ : *cur_;
    const double gap = ahead_ ? static_cast<double>(ahead_->timestamp_ms - cur_->timestamp_ms)
                              : (has_prev_ ? static_cast<double>(cur_->timestamp_ms - prev_ts_) : 0.0);
    ++tick_;
    if (last_emitted_ == pick.source_index && gap <= interval_ms_) continue;
    last_emitted_ = pick.source_index;
    return pick;
  }
  return std::nullopt;
}

std::vector<TimedFrame> resample_frames(std::vector<TimedFrame> frames, double target_fps) {
  if (frames.empty()) throw DataError("resample: empty source");
  MemorySource src(std::move(frames));
  ResampledSource resampled(src, target_fps);
  std::vector<TimedFrame> out;
  while (auto f = resampled.next()) out.push_back(std::move(*f));
  return out;
}

ModelPredictor::ModelPredictor(nn::Checkpoint ckpt, std::optional<int> width, std::optional<int> height)
    : config_(std::move(ckpt.config)), params_(std::move(ckpt.parameters)) {
  if (width) config_.input_width = *width;
  if (height) config_.input_height = *height;
  config_.validate();
  nn::validate_parameters(config_, params_);
  net_ = nn::build_network(config_);
}

ProbabilityMap<float> ModelPredictor::predict(const RgbImage& input) const {
  const RgbImage* frames[] = {&input};
  const nn::Tensor<float> batch = nn::images_to_tensor<float>(frames, config_.input_channels);
  return nn::output_plane(nn::forward_pass(net_, config_, params_, batch).probabilities, 0);
}

ProbabilityMap<float> IdentityPredictor::predict(const RgbImage& input) const {
  return to_grayscale(input).cast<float>() / 255.0f;
}

std::array<std::uint8_t, 3> heat_color(double p) {
  if (!(p >= 0.0)) p = 0.0;
  if (p > 1.0) p = 1.0;
  return {static_cast<std::uint8_t>(std::floor(255.0 * p)), 0, static_cast<std::uint8_t>(std::floor(255.0 * (1.0 - p)))};
}

RgbImage heat_map(const ProbabilityMap<float>& prob) {
  RgbImage out(static_cast<int>(prob.cols()), static_cast<int>(prob.rows()));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      const auto c = heat_color(prob(y, x));
      std::copy(c.begin(), c.end(), out.pixel(x, y));
    }
  }
  return out;
}

RgbImage compose_panel(const RgbImage& input, const BinaryMask* gt, const BinaryMask& pred, const RgbImage& heat) {
  const int w = input.width;
  const int h = input.height;
  const auto same = [&](long pw, long ph) { return pw == w && ph == h; };
  if (!input.valid() || !same(heat.width, heat.height) || !same(pred.cols(), pred.rows()) ||
      (gt && !same(gt->cols(), gt->rows()))) {
    throw ShapeError("compose_panel: panels must share the input size " + std::to_string(w) + "x" + std::to_string(h));
  }
  const int panels = gt ? 4 : 3;
  RgbImage out(panels * w + (panels - 1) * kSeparatorWidth, h, 255);
  int x0 = 0;
  const auto put_rgb = [&](const RgbImage& img) {
    for (int y = 0; y < h; ++y) {
      std::copy(img.pixel(0, y), img.pixel(0, y) + static_cast<std::ptrdiff_t>(w) * 3, out.pixel(x0, y));
    }
    x0 += w + kSeparatorWidth;
  };
  const auto put_mask = [&](const BinaryMask& m) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::uint8_t* p = out.pixel(x0 + x, y);
        p[0] = p[1] = p[2] = m(y, x) ? 255 : 0;
      }
    }
    x0 += w + kSeparatorWidth;
  };
  put_rgb(input);
  if (gt) put_mask(*gt);
  put_mask(pred);
  put_rgb(heat);
  return out;
}

json to_json(const FpsReport& r, bool include_timings) {
  json j{{"mode", r.mode},
         {"frames", r.frames},
         {"wall_seconds", r.wall_seconds},
         {"mean_fps", r.mean_fps},
         {"mean_latency_ms", r.mean_latency_ms},
         {"median_latency_ms", r.median_latency_ms},
         {"p95_latency_ms", r.p95_latency_ms},
         {"median_fps", r.median_fps},
         {"stages_ms", {{"preprocess", r.mean_preprocess_ms}, {"inference", r.mean_inference_ms}, {"compose", r.mean_compose_ms}}}};
  json errors = json::array();
  for (const FrameError& e : r.errors) errors.push_back({{"frame", e.index}, {"error", e.message}});
  j["errors"] = errors;
  if (include_timings) {
    json t = json::array();
    for (const FrameTiming& f : r.timings) {
      t.push_back({{"frame", f.index},
                   {"timestamp_ms", f.timestamp_ms},
                   {"preprocess_ms", f.preprocess_ms},
                   {"inference_ms", f.inference_ms},
                   {"compose_ms", f.compose_ms},
                   {"latency_ms", f.latency_ms},
                   {"done_ms", f.done_ms}});
    }
    j["timings"] = t;
  }
  return j;
}

namespace {

struct Work {
  std::size_t index = 0;
  TimedFrame frame;
  Clock::time_point start;
  RgbImage model_input;
  Rect crop_box;
  Rect content;
  ProbabilityMap<float> prob;  // model resolution
  std::vector<std::string> errors;
  FrameTiming timing;
};

void preprocess(Work& w, const Predictor& predictor) {
  w.start = Clock::now();
  w.timing.index = w.index;
  w.timing.timestamp_ms = w.frame.timestamp_ms;
  const RgbImage* region = &w.frame.image;
  CropResult crop;
  try {
    crop = auto_crop(w.frame.image);
    region = &crop.cropped;
    w.crop_box = crop.box;
  } catch (const DataError& e) {
    w.errors.push_back(std::string(e.what()) + "; using the full frame");
    w.crop_box = Rect{0, 0, w.frame.image.width, w.frame.image.height};
  }
  w.model_input = letterbox(*region, predictor.input_width(), predictor.input_height(), &w.content);
  w.timing.preprocess_ms = ms_between(w.start, Clock::now());
}

void infer(Work& w, const Predictor& predictor) {
  const auto t = Clock::now();
  try {
    w.prob = predictor.predict(w.model_input);
    if (w.prob.rows() != predictor.input_height() || w.prob.cols() != predictor.input_width()) {
      throw ShapeError("predictor returned " + std::to_string(w.prob.cols()) + "x" + std::to_string(w.prob.rows()));
    }
  } catch (const Error& e) {
    w.errors.push_back(e.what());
    w.prob = ProbabilityMap<float>::Zero(predictor.input_height(), predictor.input_width());
  }
  w.timing.inference_ms = ms_between(t, Clock::now());
}

PanelOutput compose(Work& w, const GroundTruth& gt) {
  const auto t = Clock::now();
  const RgbImage& img = w.frame.image;
  PanelOutput out;
  out.index = w.index;
  out.timestamp_ms = w.frame.timestamp_ms;
  out.probability = ProbabilityMap<float>::Zero(img.height, img.width);
  const ProbabilityMap<float> content = w.prob.block(w.content.y0, w.content.x0, w.content.h, w.content.w);
  out.probability.block(w.crop_box.y0, w.crop_box.x0, w.crop_box.h, w.crop_box.w) =
      resize_nearest(content, w.crop_box.w, w.crop_box.h);
  const BinaryMask pred = (out.probability >= 0.5f).cast<std::uint8_t>();

  std::optional<BinaryMask> truth;
  if (gt) {
    truth = gt(w.frame.source_index);
    if (truth && (truth->rows() != img.height || truth->cols() != img.width)) {
      w.errors.push_back("ground truth is " + std::to_string(truth->cols()) + "x" + std::to_string(truth->rows()) +
                         ", frame is " + std::to_string(img.width) + "x" + std::to_string(img.height));
      truth = BinaryMask::Zero(img.height, img.width);
    }
  }
  out.panel = compose_panel(img, truth ? &*truth : nullptr, pred, heat_map(out.probability));
  w.timing.compose_ms = ms_between(t, Clock::now());
  return out;
}

void finish(FpsReport& report, Work& w, const PanelSink& sink, PanelOutput&& out, Clock::time_point begin) {
  if (sink) sink(out);
  const auto done = Clock::now();
  w.timing.latency_ms = ms_between(w.start, done);
  w.timing.done_ms = ms_between(begin, done);
  for (std::string& e : w.errors) report.errors.push_back({w.index, std::move(e)});
  report.timings.push_back(w.timing);
}

void summarize(FpsReport& r, Clock::time_point begin, Clock::time_point end) {
  r.frames = r.timings.size();
  r.wall_seconds = std::chrono::duration<double>(end - begin).count();
  r.mean_fps = r.wall_seconds > 0.0 ? static_cast<double>(r.frames) / r.wall_seconds : 0.0;
  if (r.frames == 0) return;
  std::vector<double> lat;
  for (const FrameTiming& t : r.timings) {
    lat.push_back(t.latency_ms);
    r.mean_preprocess_ms += t.preprocess_ms;
    r.mean_inference_ms += t.inference_ms;
    r.mean_compose_ms += t.compose_ms;
  }
  const auto n = static_cast<double>(r.frames);
  r.mean_preprocess_ms /= n;
  r.mean_inference_ms /= n;
  r.mean_compose_ms /= n;
  r.mean_latency_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / n;
  std::sort(lat.begin(), lat.end());
  const std::size_t mid = lat.size() / 2;
  r.median_latency_ms = lat.size() % 2 ? lat[mid] : 0.5 * (lat[mid - 1] + lat[mid]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * n));
  r.p95_latency_ms = lat[std::clamp<std::size_t>(rank, 1, lat.size()) - 1];
  // the first gap is measured from stream start so one frame still has a rate
  std::vector<double> gaps;
  double prev = 0.0;
  for (const FrameTiming& t : r.timings) {
    gaps.push_back(t.done_ms - prev);
    prev = t.done_ms;
  }
  std::sort(gaps.begin(), gaps.end());
  const double gap = gaps.size() % 2 ? gaps[mid] : 0.5 * (gaps[mid - 1] + gaps[mid]);
  r.median_fps = gap > 0.0 ? 1000.0 / gap : 0.0;
}

}  // namespace

FpsReport annotate_stream(const Predictor& predictor, FrameSource& src, const GroundTruth& gt, const PanelSink& sink,
                          PipelineMode mode) {
  FpsReport report;
  report.mode = mode == PipelineMode::pipelined ? "pipelined" : "single_thread";
  const auto begin = Clock::now();

  if (mode == PipelineMode::single_thread) {
    for (std::size_t i = 0;; ++i) {
      std::optional<TimedFrame> f = src.next();
      if (!f) break;
      Work w;
      w.index = i;
      w.frame = std::move(*f);
      preprocess(w, predictor);
      infer(w, predictor);
      PanelOutput out = compose(w, gt);
      finish(report, w, sink, std::move(out), begin);
    }
    summarize(report, begin, Clock::now());
    return report;
  }

  BoundedQueue<Work> prepared(kPipelineDepth);
  BoundedQueue<Work> inferred(kPipelineDepth);
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto fail = [&](std::exception_ptr e) {
    {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = e;
    }
    prepared.close();
    inferred.close();
  };

  std::thread reader([&] {
    try {
      for (std::size_t i = 0;; ++i) {
        std::optional<TimedFrame> f = src.next();
        if (!f) break;
        Work w;
        w.index = i;
        w.frame = std::move(*f);
        preprocess(w, predictor);
        if (!prepared.push(std::move(w))) return;
      }
      prepared.close();
    } catch (...) {
      fail(std::current_exception());
    }
  });
  std::thread inferer([&] {
    try {
      while (std::optional<Work> w = prepared.pop()) {
        infer(*w, predictor);
        if (!inferred.push(std::move(*w))) return;
      }
      inferred.close();
    } catch (...) {
      fail(std::current_exception());
    }
  });

  try {
    while (std::optional<Work> w = inferred.pop()) {
      PanelOutput out = compose(*w, gt);
      finish(report, *w, sink, std::move(out), begin);
    }
  } catch (...) {
    fail(std::current_exception());
  }
  reader.join();
  inferer.join();
  if (failure) std::rethrow_exception(failure);
  summarize(report, begin, Clock::now());
  return report;
}

std::vector<TimedFrame> bench_frames(int frame_size, int n_frames, std::uint64_t seed, double fps) {
  SceneSpec spec;
  spec.seed = seed;
  spec.image_size = frame_size;
  const double scale = frame_size / 64.0;
  spec.stone_radius_min *= scale;
  spec.stone_radius_max *= scale;
  spec.max_drift_per_frame *= scale;
  const SynthVideo video(spec, 0, n_frames);
  std::vector<TimedFrame> frames;
  for (int i = 0; i < n_frames; ++i) {
    frames.push_back({video.render(i).image, std::llround(i * 1000.0 / fps), static_cast<std::size_t>(i)});
  }
  return frames;
}

FpsReport bench_throughput(const Predictor& predictor, const BenchSettings& settings) {
  if (settings.n_frames < 30) throw ConfigError("bench: n_frames must be >= 30");
  if (settings.frame_size < 8) throw ConfigError("bench: frame_size must be >= 8");
  MemorySource src(bench_frames(settings.frame_size, settings.n_frames, settings.seed));
  return annotate_stream(predictor, src, {}, {}, settings.mode);
}

void write_pmap(std::ostream& out, const ProbabilityMap<float>& prob) {
  out.write("PMAP", 4);
  put_u32(out, static_cast<std::uint32_t>(prob.cols()));
  put_u32(out, static_cast<std::uint32_t>(prob.rows()));
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    std::uint32_t bits;
    const float v = prob.data()[i];
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
  }
}

ProbabilityMap<float> read_pmap(std::istream& in) {
  unsigned char header[12];
  if (read_bytes(in, header, 12) < 12) throw DataError("PMAP: truncated header");
  if (std::memcmp(header, "PMAP", 4) != 0) throw DataError("PMAP: bad magic");
  const auto w = static_cast<Eigen::Index>(get_le(header + 4, 4));
  const auto h = static_cast<Eigen::Index>(get_le(header + 8, 4));
  ProbabilityMap<float> prob(h, w);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h) * 4);
  if (read_bytes(in, raw.data(), raw.size()) < raw.size()) throw DataError("PMAP: truncated data");
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    const auto bits = static_cast<std::uint32_t>(get_le(raw.data() + 4 * i, 4));
    std::memcpy(prob.data() + i, &bits, 4);
  }
  return prob;
}

}  // namespace stoneseg
