// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "stoneseg/annotations.hpp"
#include "stoneseg/cli.hpp"
#include "stoneseg/imaging.hpp"
#include "stoneseg/metrics.hpp"
#include "stoneseg/nn/checkpoint.hpp"
#include "stoneseg/nn/layers.hpp"
#include "stoneseg/nn/model.hpp"
#include "stoneseg/synthdata.hpp"
#include "stoneseg/training.hpp"
#include "stoneseg/videopipe.hpp"
#include "temp_dir.hpp"

using namespace stoneseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) h = (h ^ data[i]) * 1099511628211ull;
  return h;
}

// Shared state: the criterion-5 model feeds criteria 6, 7, 8 and 11.
struct Shared {
  TempDir dir;
  std::optional<nn::Checkpoint> c5_model;
  SampleSet c5_val;
};

Shared& shared() {
  static Shared s;
  return s;
}

// ---------------------------------------------------------------- C1

Outcome c1_otsu() {
  std::mt19937_64 rng(1);
  double lib_seconds = 0.0;
  for (int k = 0; k < 1000; ++k) {
    GrayImage img(64, 64);
    // Mix of uniform noise, few-level images and narrow histograms.
    const int mode = k % 3;
    const int lo = static_cast<int>(rng() % 200);
    const int span = 1 + static_cast<int>(rng() % 56);
    for (Eigen::Index i = 0; i < img.size(); ++i) {
      int v = mode == 0 ? static_cast<int>(rng() % 256)
                        : (mode == 1 ? (rng() % 4) * 85 : lo + static_cast<int>(rng() % span));
      img.data()[i] = static_cast<std::uint8_t>(v);
    }
    const auto expected = oracle::otsu(img);
    const auto t0 = Clock::now();
    const OtsuResult got = otsu_threshold(img);
    lib_seconds += seconds_since(t0);
    const int want = expected ? *expected : std::max(img.maxCoeff() - 1, 0);
    if (expected.has_value() == got.degenerate || got.threshold != want) {
      return {false, fmt("image %d: threshold %d, oracle %d", k, got.threshold, want)};
    }
  }
  return {lib_seconds < 5.0, fmt("1000/1000 thresholds equal the oracle; otsu_threshold total %.3f s (limit 5 s)", lib_seconds)};
}

// ---------------------------------------------------------------- C2

Outcome c2_rasterize() {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 500; ++k) {
    const int n = 3 + static_cast<int>(rng() % 10);
    const auto poly = oracle::random_simple_polygon(rng, n, 64, 64, k % 2 == 1);
    const BinaryMask got = rasterize_polygon(poly, 64, 64);
    const BinaryMask want = oracle::rasterize({poly}, 64, 64);
    if (!(got == want).all()) {
      return {false, fmt("polygon %d (%d vertices): %ld pixels differ", k, n, static_cast<long>((got != want).count()))};
    }
  }
  return {true, "500/500 masks identical to the point-in-polygon oracle"};
}

// ---------------------------------------------------------------- C3

Outcome c3_metrics() {
  using oracle::Rational;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    const int h = 1 + static_cast<int>(rng() % 32);
    const int w = 1 + static_cast<int>(rng() % 32);
    const double pp = unit(rng), pg = unit(rng);
    BinaryMask p(h, w), g(h, w);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      p.data()[i] = unit(rng) < pp;
      g.data()[i] = unit(rng) < pg;
    }
    const ConfusionCounts c = confusion_counts(p, g);
    const long uni = c.tp + c.fp + c.fn;
    const Rational iou = uni == 0 ? Rational(1) : Rational(c.tp, uni);
    const Rational d = uni == 0 ? Rational(1) : Rational(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    if (d != 2 * iou / (1 + iou)) return {false, fmt("pair %d: identity fails in exact arithmetic", k)};
    if (dice(p, g) != static_cast<double>(d) || confusion_metrics(c).iou != static_cast<double>(iou)) {
      return {false, fmt("pair %d: dice/iou not the correctly rounded count ratios", k)};
    }
  }

  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    ProbabilityMap<double> prob(16, 16);
    BinaryMask gt(16, 16);
    std::vector<double> scores;
    std::vector<int> labels;
    const int levels = k % 2 ? 10 : 1 << 20;
    for (Eigen::Index i = 0; i < prob.size(); ++i) {
      prob.data()[i] = static_cast<double>(rng() % levels) / levels;
      gt.data()[i] = unit(rng) < 0.3 + 0.4 * prob.data()[i];
    }
    if (!gt.any()) gt(0, 0) = 1;
    if (gt.all()) gt(0, 0) = 0;
    for (Eigen::Index i = 0; i < prob.size(); ++i) {
      scores.push_back(prob.data()[i]);
      labels.push_back(gt.data()[i]);
    }
    worst = std::max(worst, std::abs(roc_auc(prob, gt).auc - oracle::pairwise_auc(scores, labels)));
  }
  return {worst <= 1e-12, fmt("dice = 2 iou/(1+iou) exactly on 1000 pairs; max |AUC - pairwise| = %.2e (limit 1e-12)", worst)};
}

// ---------------------------------------------------------------- C4

using TD = nn::Tensor<double>;

TD random_tensor(std::mt19937_64& rng, const nn::Shape& s, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  TD t(s);
  for (nn::Index i = 0; i < t.size(); ++i) t.values()[i] = n(rng);
  return t;
}

double layer_check(nn::LayerKind kind, const std::vector<nn::Shape>& in_shapes, const nn::Shape& wshape,
                   const nn::Shape& bshape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TD> xs;
  for (const auto& s : in_shapes) xs.push_back(random_tensor(rng, s));
  TD w = random_tensor(rng, wshape, 0.5);
  TD b = random_tensor(rng, bshape, 0.5);
  nn::LayerParams<double> p;
  if (w.size()) p.weight = &w;
  if (b.size()) p.bias = &b;
  const auto ptrs = [&] {
    std::vector<const TD*> v;
    for (const TD& x : xs) v.push_back(&x);
    return v;
  };
  const TD out = nn::layer_apply<double>(kind, p, ptrs());
  const TD r = random_tensor(rng, out.shape());
  const auto g = nn::layer_grad<double>(kind, p, ptrs(), out, r);
  const auto f = [&] { return nn::layer_apply<double>(kind, p, ptrs()).values().dot(r.values()); };
  double worst = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    worst = std::max(worst, oracle::max_relative_error(g.inputs[i].values(), oracle::numeric_gradient(xs[i], f)));
  }
  if (w.size()) worst = std::max(worst, oracle::max_relative_error(g.weight.values(), oracle::numeric_gradient(w, f)));
  if (b.size()) worst = std::max(worst, oracle::max_relative_error(g.bias.values(), oracle::numeric_gradient(b, f)));
  return worst;
}

double model_check(nn::BlockKind kind, int depth, bool nested, bool norm) {
  nn::ModelConfig c;
  c.block_kind = kind;
  c.depth = depth;
  c.base_channels = 2;
  c.nested_skips = nested;
  c.use_norm = norm;
  if (kind == nn::BlockKind::dense) c.dense = nn::DenseSettings{2, 2};
  c.input_channels = 1;
  c.input_height = c.input_width = 8;
  std::mt19937_64 rng(11);
  auto params = nn::build_model<double>(c, 7);
  // Nonzero biases keep units off the ReLU kink.
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto& [name, t] : params) {
    if (name.ends_with(".bias")) {
      for (nn::Index i = 0; i < t.size(); ++i) t.values()[i] += jitter(rng);
    }
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution bit(0.4);
  TD x({2, 1, 8, 8}), y({2, 1, 8, 8});
  for (nn::Index i = 0; i < x.size(); ++i) x.values()[i] = u(rng);
  for (nn::Index i = 0; i < y.size(); ++i) y.values()[i] = bit(rng);
  const auto r = nn::backward(c, params, x, y);
  double worst = 0.0;
  for (auto& [name, t] : params) {
    const auto numeric = oracle::numeric_gradient(t, [&] { return nn::bce_loss(nn::forward(c, params, x), y); });
    worst = std::max(worst, oracle::max_relative_error(r.grads.at(name).values(), numeric, 1e-7));
  }
  return worst;
}

Outcome c4_gradients() {
  using nn::LayerKind;
  struct L {
    LayerKind kind;
    std::vector<nn::Shape> in;
    nn::Shape w{0, 0, 0, 0}, b{0, 0, 0, 0};
  };
  const std::vector<L> layers{
      {LayerKind::conv3x3, {{2, 3, 5, 4}}, {4, 3, 3, 3}, {4, 1, 1, 1}},
      {LayerKind::conv1x1, {{2, 3, 4, 4}}, {2, 3, 1, 1}, {2, 1, 1, 1}},
      {LayerKind::relu, {{2, 2, 3, 3}}},
      {LayerKind::sigmoid, {{1, 2, 3, 3}}},
      {LayerKind::maxpool2, {{2, 2, 4, 6}}},
      {LayerKind::upsample2, {{1, 2, 3, 2}}},
      {LayerKind::concat, {{2, 1, 3, 3}, {2, 3, 3, 3}}},
      {LayerKind::add, {{2, 2, 3, 3}, {2, 2, 3, 3}}},
      {LayerKind::norm, {{3, 2, 3, 3}}, {2, 1, 1, 1}, {2, 1, 1, 1}},
  };
  double worst = 0.0;
  std::string worst_name;
  auto note = [&](double e, const std::string& name) {
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
  };
  for (const L& l : layers) {
    for (std::uint64_t seed : {1u, 2u}) note(layer_check(l.kind, l.in, l.w, l.b, seed), std::string(to_string(l.kind)));
  }
  int models = 0;
  for (auto kind : {nn::BlockKind::plain, nn::BlockKind::residual, nn::BlockKind::dense}) {
    for (int depth : {1, 2}) {
      for (bool nested : {false, true}) {
        note(model_check(kind, depth, nested, false),
             fmt("%s depth %d%s", std::string(to_string(kind)).c_str(), depth, nested ? " nested" : ""));
        ++models;
      }
    }
  }
  note(model_check(nn::BlockKind::residual, 2, true, true), "residual depth 2 nested norm");
  ++models;
  return {worst <= 1e-4, fmt("%zu layer kinds, %d models; max relative error %.2e at %s (limit 1e-4)", layers.size(),
                             models, worst, worst_name.c_str())};
}

// ---------------------------------------------------------------- C5

// 12 videos of 20 frames; the first 10 videos train (200 frames), the last 2
// validate (40 frames), so no video straddles the split.
std::pair<SampleSet, SampleSet> train_val_set(std::uint64_t seed) {
  SceneSpec spec;
  spec.seed = seed;
  spec.challenges = parse_challenges("all");
  spec.challenge_probability = 0.25;
  const SynthDataset d = generate_dataset(spec, 12, 20);
  SampleSet train, val;
  for (std::size_t i = 0; i < d.frames.size(); ++i) {
    SampleSet& s = i < 200 ? train : val;
    s.frames.push_back(d.frames[i]);
    s.masks.push_back(d.masks[i]);
  }
  return {train, val};
}

nn::ModelConfig c5_model_config() {
  nn::ModelConfig m;
  m.block_kind = nn::BlockKind::plain;
  m.nested_skips = true;
  m.depth = 2;
  m.base_channels = 8;
  m.input_height = m.input_width = 64;
  return m;
}

TrainConfig c5_train_config() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 4;
  c.epochs = 20;
  c.seed = 1;
  return c;
}

Outcome c5_training() {
  const auto [train, val] = train_val_set(5);
  const auto t0 = Clock::now();
  const TrainResult r = train_model(c5_model_config(), c5_train_config(), train, &val);
  const double secs = seconds_since(t0);
  const MetricReport final_val = evaluate_model(r.checkpoint, val);
  shared().c5_model = r.checkpoint;
  shared().c5_val = val;
  const bool pass = final_val.dice >= 0.90 && secs <= 600.0;
  return {pass, fmt("unetpp_plain depth 2, %zu train / %zu val, 20 epochs: final val Dice %.4f (>= 0.90), "
                    "best %.4f, %.1f s (limit 600 s)",
                    train.size(), val.size(), final_val.dice, r.best_val_dice.value_or(0.0), secs)};
}

// Trains the criterion-5 model when a dependent criterion runs on its own.
bool ensure_c5_model() {
  if (!shared().c5_model) c5_training();
  return shared().c5_model.has_value();
}

// ---------------------------------------------------------------- C6

Outcome c6_challenges() {
  if (!ensure_c5_model()) return {false, "criterion 5 produced no model"};
  SceneSpec spec;
  spec.seed = 99;
  spec.challenges = parse_challenges("all");
  spec.challenge_probability = 1.0;
  const SynthDataset d = generate_dataset(spec, 5, 20);
  const MetricReport r = evaluate_model(*shared().c5_model, SampleSet{d.frames, d.masks});
  return {r.dice >= 0.80, fmt("5 videos x 20 frames, every challenge on every frame: mean Dice %.4f (>= 0.80)", r.dice)};
}

// ---------------------------------------------------------------- C7

Outcome c7_warm_start() {
  if (!ensure_c5_model()) return {false, "criterion 5 produced no model"};
  const fs::path prior = shared().dir / "c7_prior.ssck";
  nn::write_checkpoint(prior, *shared().c5_model);
  // A different scene seed than the pretraining data.
  const auto [train, val] = train_val_set(7);
  constexpr double target = 0.85;
  const auto steps_or_inf = [&](const TrainConfig& cfg) {
    const TrainResult r = train_model(c5_model_config(), cfg, train, &val);
    const auto s = steps_to_dice(r.records, target);
    return s ? static_cast<double>(*s) : INFINITY;
  };
  std::vector<double> warm, cold;
  for (std::int64_t seed : {1, 2, 3}) {
    TrainConfig cfg = c5_train_config();
    cfg.epochs = 3;
    cfg.seed = seed;
    cfg.validation_interval = 5;
    cold.push_back(steps_or_inf(cfg));
    cfg.warm_start = prior;
    warm.push_back(steps_or_inf(cfg));
  }
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[1];
  };
  const double mw = median(warm), mc = median(cold);
  return {mw <= mc, fmt("steps to val Dice %.2f, seeds 1-3: warm %g/%g/%g (median %g), cold %g/%g/%g (median %g)", target,
                        warm[0], warm[1], warm[2], mw, cold[0], cold[1], cold[2], mc)};
}

// ---------------------------------------------------------------- C8

Outcome c8_throughput() {
  if (!ensure_c5_model()) return {false, "criterion 5 produced no model"};
  const fs::path ckpt = shared().dir / "c8.ssck";
  const fs::path pipe = shared().dir / "c8.frm";
  const fs::path report = shared().dir / "c8.json";
  nn::write_checkpoint(ckpt, *shared().c5_model);
  const std::vector<TimedFrame> frames = bench_frames(256, 300, 8);
  {
    std::ofstream out(pipe, std::ios::binary);
    for (const TimedFrame& f : frames) write_pipe_frame(out, f.image, f.timestamp_ms);
  }
  std::ostringstream sink_out, sink_err;
  const int code = cli::dispatch({"annotate-video", "--checkpoint", ckpt.string(), "--in", pipe.string(), "--mode",
                                  "pipelined", "--report", report.string()},
                                 sink_out, sink_err);
  if (code != 0) return {false, "annotate-video exited " + std::to_string(code) + ": " + sink_err.str()};
  const auto j = nlohmann::json::parse(read_bytes(report));
  const double fps = j.at("mean_fps").get<double>();
  const std::size_t n = j.at("frames").get<std::size_t>();

  // Panels from both modes, hashed in arrival order.
  const ModelPredictor predictor(*shared().c5_model);
  const auto hashes = [&](PipelineMode mode) {
    MemorySource src(frames);
    std::vector<std::uint64_t> h;
    annotate_stream(predictor, src, {}, [&](const PanelOutput& o) {
      h.push_back(fnv1a(o.panel.data.data(), o.panel.data.size(),
                        fnv1a(reinterpret_cast<const std::uint8_t*>(o.probability.data()),
                              static_cast<std::size_t>(o.probability.size()) * sizeof(float))));
    }, mode);
    return h;
  };
  const auto single = hashes(PipelineMode::single_thread);
  const auto piped = hashes(PipelineMode::pipelined);
  const bool identical = single.size() == 300 && single == piped;
  return {fps >= 30.0 && n == 300 && identical,
          fmt("annotate-video 256x256, %zu frames, pipelined: mean %.1f FPS (>= 30); single vs pipelined panels %s",
              n, fps, identical ? "bitwise identical" : "DIFFER")};
}

// ---------------------------------------------------------------- C9

Outcome c9_steps() {
  const auto paper = total_steps(676, 8, 10);
  if (paper != 850) return {false, fmt("total_steps(676, 8, 10) = %lld", static_cast<long long>(paper))};
  std::mt19937_64 rng(9);
  for (int k = 0; k < 10; ++k) {
    const long long n = 1 + static_cast<long long>(rng() % 5000);
    const long long b = 1 + static_cast<long long>(rng() % 128);
    const long long e = 1 + static_cast<long long>(rng() % 50);
    if (total_steps(n, b, e) != oracle::steps_by_counting(n, b, e)) {
      return {false, fmt("case (%lld, %lld, %lld) disagrees", n, b, e)};
    }
  }
  return {true, "total_steps(676, 8, 10) = 850; 10/10 random cases match batch counting"};
}

// ---------------------------------------------------------------- C10

Outcome c10_determinism() {
  const fs::path root = shared().dir / "c10";
  SceneSpec spec;
  spec.seed = 10;
  spec.challenges = parse_challenges("all");
  for (const char* run : {"a", "b"}) write_dataset(root / run / "data", generate_dataset(spec, 5, 4));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a" / "data")) {
    if (!e.is_regular_file()) continue;
    const fs::path twin = root / "b" / "data" / fs::relative(e.path(), root / "a" / "data");
    if (read_bytes(e.path()) != read_bytes(twin)) return {false, "dataset file differs: " + twin.string()};
    ++files;
  }

  nn::ModelConfig m;
  m.depth = 1;
  m.base_channels = 4;
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 4;
  cfg.validation_interval = 2;
  std::vector<std::vector<std::uint8_t>> ckpts;
  for (const char* run : {"a", "b"}) {
    std::vector<VideoInfo> videos;
    for (const DatasetEntry& e : load_dataset_index(root / run / "data" / "index.json").entries) {
      if (videos.empty() || videos.back().video_id != e.video_id) videos.push_back({e.video_id, 0});
      ++videos.back().frame_count;
    }
    const DatasetIndex index = split_dataset(videos, 0.2, 3, 0.25);
    save_dataset_index(root / run / "data" / "index.json", index);
    JsonlLog log(root / run / "log.jsonl");
    const TrainResult r = train_model(m, cfg, load_dataset_index(root / run / "data" / "index.json"),
                                      [&](const ExperimentRecord& rec) { log.append(rec); });
    ckpts.push_back(nn::save_checkpoint(r.checkpoint));
  }
  const std::string log_a = read_bytes(root / "a" / "log.jsonl");
  const bool logs = !log_a.empty() && log_a == read_bytes(root / "b" / "log.jsonl");
  const bool weights = ckpts[0] == ckpts[1];
  return {logs && weights, fmt("%zu dataset files identical; training logs %s (%zu bytes); checkpoints %s (%zu bytes)",
                               files, logs ? "identical" : "DIFFER", log_a.size(), weights ? "identical" : "DIFFER",
                               ckpts[0].size())};
}

// ---------------------------------------------------------------- C11

Outcome c11_checkpoint() {
  if (!ensure_c5_model()) return {false, "criterion 5 produced no model"};
  const nn::Checkpoint& ckpt = *shared().c5_model;
  const fs::path path = shared().dir / "c11.ssck";
  nn::write_checkpoint(path, ckpt);
  const nn::Checkpoint back = nn::read_checkpoint(path);
  const std::vector<RgbImage> probe(shared().c5_val.frames.begin(), shared().c5_val.frames.begin() + 8);
  const auto a = predict(ckpt, probe);
  const auto b = predict(back, probe);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = (a[i] == b[i]).all();

  const std::vector<std::uint8_t> good = nn::save_checkpoint(ckpt);
  const auto reason = [](const std::vector<std::uint8_t>& bytes) -> std::string {
    try {
      nn::load_checkpoint(bytes);
    } catch (const CheckpointError& e) {
      switch (e.reason()) {
        case CheckpointError::Reason::bad_magic:
          return "bad_magic";
        case CheckpointError::Reason::truncated:
          return "truncated";
        case CheckpointError::Reason::shape_mismatch:
          return "shape_mismatch";
        case CheckpointError::Reason::malformed:
          return "malformed";
      }
    }
    return "accepted";
  };
  std::vector<std::uint8_t> magic = good;
  magic[1] ^= 0xff;
  const std::vector<std::uint8_t> cut(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(good.size() * 2 / 3));
  nn::Checkpoint wrong = ckpt;
  wrong.parameters.at("head.weight") = nn::Tensor<float>({1, 3, 1, 1});
  const std::string r1 = reason(magic), r2 = reason(cut), r3 = reason(nn::save_checkpoint(wrong));
  const bool errors = r1 == "bad_magic" && r2 == "truncated" && r3 == "shape_mismatch";
  return {same && errors, fmt("8-frame probe outputs %s after roundtrip; corrupt magic -> %s, truncated -> %s, "
                              "wrong head shape -> %s",
                              same ? "bitwise identical" : "DIFFER", r1.c_str(), r2.c_str(), r3.c_str())};
}

}  // namespace

// Optional arguments select criteria by id, e.g. `stoneseg_acceptance C5 C6`.
int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"C1  otsu oracle", c1_otsu},
      {"C2  rasterization oracle", c2_rasterize},
      {"C3  metric identities", c3_metrics},
      {"C4  gradient checks", c4_gradients},
      {"C5  desk-scale training", c5_training},
      {"C6  challenge hold-out", c6_challenges},
      {"C7  warm start", c7_warm_start},
      {"C8  throughput", c8_throughput},
      {"C9  step count", c9_steps},
      {"C10 determinism", c10_determinism},
      {"C11 checkpoint roundtrip", c11_checkpoint},
  };
  const std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  int ran = 0;
  for (const auto& [name, run] : criteria) {
    const std::string id = std::string(name).substr(0, std::string(name).find(' '));
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    ++ran;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %-26s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
