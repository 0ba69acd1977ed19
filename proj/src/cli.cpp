#include "stoneseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "stoneseg/annotations.hpp"
#include "stoneseg/errors.hpp"
#include "stoneseg/image_io.hpp"
#include "stoneseg/imaging.hpp"
#include "stoneseg/metrics.hpp"
#include "stoneseg/nn/checkpoint.hpp"
#include "stoneseg/synthdata.hpp"
#include "stoneseg/training.hpp"
#include "stoneseg/videopipe.hpp"

namespace stoneseg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// {"model": {...}, "train": {...}, "scene": {...}}; every section optional.
struct ConfigFile {
  json model = json::object();
  json train = json::object();
  json scene = json::object();
};

ConfigFile load_config(const std::string& path) {
  ConfigFile cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (item.key() == "model") {
      cfg.model = item.value();
    } else if (item.key() == "train") {
      cfg.train = item.value();
    } else if (item.key() == "scene") {
      cfg.scene = item.value();
    } else {
      throw ConfigError("config: unknown section '" + item.key() + "'");
    }
  }
  return cfg;
}

template <typename T>
void override_key(json& section, const char* key, const CLI::Option* opt, const T& value) {
  if (opt->count() > 0) section[key] = value;
}

void write_json(const json& j, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << j.dump(2) << '\n';
}

std::vector<fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::string numbered(const char* pattern, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, i);
  return buf;
}

// Model and train flags shared by train and grid.
struct TrainFlags {
  std::string config;
  std::string data;
  std::string log;
  std::string block;
  int depth = 0;
  int base = 0;
  bool nested = false;
  double lr = 0.0;
  int batch = 0;
  int epochs = 0;
  std::int64_t seed = 0;
  std::string optimizer;
  int val_interval = 0;
  std::string warm_start;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App* app, bool with_lr_batch) {
    app->add_option("--config", config, "JSON config with model/train sections");
    app->add_option("--data", data, "dataset index.json")->required();
    app->add_option("--log", log, "append ExperimentRecords as JSON Lines");
    opts["block_kind"] = app->add_option("--block", block, "plain | residual | dense");
    opts["depth"] = app->add_option("--depth", depth, "encoder depth");
    opts["base_channels"] = app->add_option("--base", base, "channels at level 0");
    opts["nested_skips"] = app->add_flag("--nested", nested, "U-Net++ nested skips");
    if (with_lr_batch) {
      opts["learning_rate"] = app->add_option("--lr", lr, "learning rate");
      opts["batch_size"] = app->add_option("--batch", batch, "batch size");
    }
    opts["epochs"] = app->add_option("--epochs", epochs);
    opts["seed"] = app->add_option("--seed", seed);
    opts["optimizer"] = app->add_option("--optimizer", optimizer, "adam | sgd");
    opts["validation_interval"] = app->add_option("--val-interval", val_interval, "steps between validations");
    opts["warm_start"] = app->add_option("--warm-start", warm_start, "checkpoint to initialise from");
  }

  std::pair<nn::ModelConfig, TrainConfig> resolve() const {
    ConfigFile file = load_config(config);
    override_key(file.model, "block_kind", opts.at("block_kind"), block);
    override_key(file.model, "depth", opts.at("depth"), depth);
    override_key(file.model, "base_channels", opts.at("base_channels"), base);
    override_key(file.model, "nested_skips", opts.at("nested_skips"), nested);
    if (opts.contains("learning_rate")) {
      override_key(file.train, "learning_rate", opts.at("learning_rate"), lr);
      override_key(file.train, "batch_size", opts.at("batch_size"), batch);
    }
    override_key(file.train, "epochs", opts.at("epochs"), epochs);
    override_key(file.train, "seed", opts.at("seed"), seed);
    override_key(file.train, "optimizer", opts.at("optimizer"), optimizer);
    override_key(file.train, "validation_interval", opts.at("validation_interval"), val_interval);
    override_key(file.train, "warm_start", opts.at("warm_start"), warm_start);
    return {nn::model_config_from_json(file.model), train_config_from_json(file.train)};
  }

  RecordSink sink(std::unique_ptr<JsonlLog>& holder) const {
    if (log.empty()) return {};
    holder = std::make_unique<JsonlLog>(log);
    JsonlLog* p = holder.get();
    return [p](const ExperimentRecord& r) { p->append(r); };
  }
};

int run_crop(const std::string& in_dir, const std::string& out_dir, std::ostream& out) {
  fs::create_directories(out_dir);
  json boxes = json::object();
  for (const fs::path& file : image_files(in_dir)) {
    const CropResult c = auto_crop(read_rgb(file));
    const fs::path target = fs::path(out_dir) / file.filename().replace_extension(".png");
    write_rgb(target, c.cropped);
    boxes[file.filename().string()] = {{"x0", c.box.x0}, {"y0", c.box.y0}, {"w", c.box.w}, {"h", c.box.h}};
  }
  write_json(boxes, (fs::path(out_dir) / "boxes.json").string(), out);
  out << "cropped " << boxes.size() << " frames\n";
  return ok;
}

fs::path mask_name(const std::string& image_name) {
  fs::path p(image_name);
  std::string stem = p.stem().string();
  if (stem.rfind("frame_", 0) == 0) {
    stem = "mask_" + stem.substr(6);
  } else {
    stem += "_mask";
  }
  return p.parent_path() / (stem + ".png");
}

int run_rasterize(const std::string& ann_path, const std::string& out_dir, std::ostream& out) {
  std::ifstream in(ann_path);
  if (!in) throw DataError("cannot open " + ann_path);
  std::stringstream text;
  text << in.rdbuf();
  const std::vector<AnnotationDoc> docs = parse_annotations(text.str());
  for (const AnnotationDoc& doc : docs) {
    const fs::path target = fs::path(out_dir) / mask_name(doc.image_name);
    fs::create_directories(target.parent_path());
    write_mask(target, rasterize_polygons(doc));
  }
  out << "rasterized " << docs.size() << " masks\n";
  return ok;
}

int run_split(const std::string& index_path, const std::string& videos_path, const std::string& out_path,
              double fraction, double val_fraction, std::int64_t seed, std::ostream& out) {
  std::vector<VideoInfo> videos;
  fs::path target = out_path;
  if (!index_path.empty()) {
    const DatasetIndex existing = load_dataset_index(index_path);
    std::map<std::string, int> counts;
    std::vector<std::string> order;
    for (const DatasetEntry& e : existing.entries) {
      if (counts[e.video_id]++ == 0) order.push_back(e.video_id);
    }
    for (const std::string& id : order) videos.push_back({id, counts[id]});
    if (target.empty()) target = index_path;
  } else {
    std::ifstream in(videos_path);
    if (!in) throw DataError("cannot open " + videos_path);
    try {
      for (const json& v : json::parse(in)) videos.push_back({v.at("video_id").get<std::string>(), v.at("frame_count").get<int>()});
    } catch (const json::exception& e) {
      throw DataError("video list " + videos_path + ": " + e.what());
    }
    if (target.empty()) target = fs::path(videos_path).parent_path() / "index.json";
  }
  const DatasetIndex index = split_dataset(videos, fraction, seed, val_fraction);
  save_dataset_index(target, index);
  out << "train " << index.count(Split::train) << ", val " << index.count(Split::val) << ", test "
      << index.count(Split::test) << " -> " << target.string() << '\n';
  return ok;
}

int run_train(const TrainFlags& flags, const std::string& ckpt_out, std::ostream& out) {
  const auto [model, train] = flags.resolve();
  const DatasetIndex index = load_dataset_index(flags.data);
  std::unique_ptr<JsonlLog> log;
  const TrainResult result = train_model(model, train, index, flags.sink(log));
  nn::write_checkpoint(ckpt_out, result.checkpoint);
  json summary{{"run_id", make_run_id(model, train)},
               {"steps", result.checkpoint.training_steps_completed},
               {"checkpoint", ckpt_out}};
  summary["best_val_dice"] = result.best_val_dice ? json(*result.best_val_dice) : json(nullptr);
  out << summary.dump() << '\n';
  return ok;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_grid(const TrainFlags& flags, const std::string& lrs, const std::string& batches, int seeds,
             const std::string& ckpt_out, const std::string& report, std::ostream& out) {
  const auto [model, base] = flags.resolve();
  GridSpec grid;
  try {
    for (const std::string& s : split_list(lrs)) grid.learning_rates.push_back(std::stod(s));
    for (const std::string& s : split_list(batches)) grid.batch_sizes.push_back(std::stoi(s));
  } catch (const std::exception&) {
    throw ConfigError("grid: --lrs and --batches take comma-separated numbers");
  }
  grid.seeds_per_cell = seeds;
  grid.validate();
  const DatasetIndex index = load_dataset_index(flags.data);
  if (index.count(Split::val) == 0) throw DataError("grid: the dataset index has no val split");
  std::unique_ptr<JsonlLog> log;
  const GridResult result =
      grid_search(model, grid, base, load_samples(index, Split::train), load_samples(index, Split::val), flags.sink(log));
  nn::write_checkpoint(ckpt_out, result.best_checkpoint);
  json cells = json::array();
  for (const GridCell& c : result.cells) {
    cells.push_back({{"run_id", c.run_id},
                     {"max_val_dice", c.max_val_dice ? json(*c.max_val_dice) : json(nullptr)},
                     {"diverged", c.diverged},
                     {"error", c.error}});
  }
  write_json({{"best", to_json(result.best)}, {"best_run_id", make_run_id(model, result.best)}, {"cells", cells}},
             report, out);
  return ok;
}

int run_synth(const std::string& config, const std::string& out_dir, int videos, int frames,
              const std::map<std::string, CLI::Option*>& opts, std::uint64_t seed, int size,
              const std::string& challenges, double probability, std::ostream& out) {
  ConfigFile file = load_config(config);
  override_key(file.scene, "seed", opts.at("seed"), seed);
  override_key(file.scene, "image_size", opts.at("size"), size);
  override_key(file.scene, "challenge_probability", opts.at("prob"), probability);
  if (opts.at("challenges")->count() > 0) {
    json list = json::array();
    for (Challenge c : parse_challenges(challenges)) list.push_back(std::string(to_string(c)));
    file.scene["challenges"] = list;
  }
  const SceneSpec spec = scene_spec_from_json(file.scene);
  const SynthDataset data = generate_dataset(spec, videos, frames);
  write_dataset(out_dir, data);
  out << "wrote " << data.frames.size() << " frames from " << videos << " videos to " << out_dir << '\n';
  return ok;
}

int run_eval(const std::string& ckpt_path, const std::string& data, const std::string& split, const std::string& report,
             std::ostream& out) {
  const nn::Checkpoint ckpt = nn::read_checkpoint(ckpt_path);
  const DatasetIndex index = load_dataset_index(data);
  write_json(to_json(evaluate_model(ckpt, index, split_from_string(split))), report, out);
  return ok;
}

PipelineMode parse_mode(const std::string& mode) {
  if (mode == "pipelined") return PipelineMode::pipelined;
  if (mode == "single") return PipelineMode::single_thread;
  throw ConfigError("mode must be 'single' or 'pipelined'");
}

struct AnnotateFlags {
  std::string checkpoint;
  std::string input;
  std::string gt;
  std::string out_dir;
  std::string out_pipe;
  std::string heatmaps;
  std::string report;
  std::string mode = "pipelined";
  double resample = 0.0;
  bool timings = false;
};

int run_annotate(const AnnotateFlags& f, std::ostream& out) {
  const ModelPredictor predictor(nn::read_checkpoint(f.checkpoint));
  std::unique_ptr<FrameSource> base;
  std::ifstream pipe_file;
  if (f.input == "-") {
    base = std::make_unique<PipeSource>(std::cin);
  } else if (fs::is_directory(f.input)) {
    base = std::make_unique<DirectorySource>(f.input);
  } else {
    pipe_file.open(f.input, std::ios::binary);
    if (!pipe_file) throw DataError("cannot open " + f.input);
    base = std::make_unique<PipeSource>(pipe_file);
  }
  std::unique_ptr<ResampledSource> resampled;
  FrameSource* src = base.get();
  if (f.resample > 0.0) {
    resampled = std::make_unique<ResampledSource>(*base, f.resample);
    src = resampled.get();
  }

  GroundTruth gt;
  if (!f.gt.empty()) {
    const fs::path dir = f.gt;
    gt = [dir](std::size_t i) -> std::optional<BinaryMask> { return read_mask(dir / numbered("mask_%06zu.png", i)); };
  }
  if (!f.out_dir.empty()) fs::create_directories(f.out_dir);
  if (!f.heatmaps.empty()) fs::create_directories(f.heatmaps);
  std::ofstream pipe_out;
  if (!f.out_pipe.empty()) {
    pipe_out.open(f.out_pipe, std::ios::binary);
    if (!pipe_out) throw DataError("cannot write " + f.out_pipe);
  }
  const PanelSink sink = [&](const PanelOutput& p) {
    if (!f.out_dir.empty()) write_rgb(fs::path(f.out_dir) / numbered("panel_%06zu.png", p.index), p.panel);
    if (pipe_out.is_open()) write_pipe_frame(pipe_out, p.panel, p.timestamp_ms);
    if (!f.heatmaps.empty()) {
      std::ofstream h(fs::path(f.heatmaps) / numbered("heat_%06zu.pmap", p.index), std::ios::binary);
      write_pmap(h, p.probability);
    }
  };
  const FpsReport report = annotate_stream(predictor, *src, gt, sink, parse_mode(f.mode));
  write_json(to_json(report, f.timings), f.report, out);
  return ok;
}

int run_bench(const std::string& ckpt_path, const BenchSettings& settings, bool full_res, const std::string& report,
              std::ostream& out) {
  std::unique_ptr<Predictor> predictor;
  if (ckpt_path.empty()) {
    const int side = full_res ? settings.frame_size : 64;
    predictor = std::make_unique<IdentityPredictor>(side, side);
  } else if (full_res) {
    predictor = std::make_unique<ModelPredictor>(nn::read_checkpoint(ckpt_path), settings.frame_size, settings.frame_size);
  } else {
    predictor = std::make_unique<ModelPredictor>(nn::read_checkpoint(ckpt_path));
  }
  write_json(to_json(bench_throughput(*predictor, settings)), report, out);
  return ok;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kidney stone segmentation pipeline: data, training, evaluation and video annotation.", "stoneseg"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string in_dir, out_dir, ann_path;
  auto* crop = app.add_subcommand("crop", "auto-crop every frame in a directory; writes boxes.json");
  crop->add_option("--in", in_dir, "input frame directory")->required();
  crop->add_option("--out", out_dir, "output directory")->required();

  auto* rasterize = app.add_subcommand("rasterize", "rasterize polygon annotations into 0/255 PNG masks");
  rasterize->add_option("--annotations", ann_path, "annotation JSON")->required();
  rasterize->add_option("--out", out_dir, "mask directory")->required();

  std::string index_path, videos_path, out_path;
  double fraction = 0.15, val_fraction = 0.0;
  std::int64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "video-grouped train/val/test split");
  auto* split_index = split->add_option("--index", index_path, "existing dataset index to re-split");
  split->add_option("--videos", videos_path, "JSON list of {video_id, frame_count}")->excludes(split_index);
  split->add_option("--out", out_path, "output index (default: overwrite --index)");
  split->add_option("--fraction", fraction, "test fraction in [0.1, 0.2]");
  split->add_option("--val-fraction", val_fraction, "validation fraction of the remaining videos");
  split->add_option("--seed", split_seed);

  std::string synth_config;
  int videos = 5, frames = 100, size = 64;
  std::uint64_t synth_seed = 0;
  std::string challenges;
  double probability = 0.5;
  std::map<std::string, CLI::Option*> synth_opts;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset with exact masks");
  synth->add_option("--config", synth_config, "JSON config with a scene section");
  synth->add_option("--out", out_dir, "dataset directory")->required();
  synth->add_option("--videos", videos, "number of videos");
  synth->add_option("--frames", frames, "frames per video");
  synth_opts["seed"] = synth->add_option("--seed", synth_seed);
  synth_opts["size"] = synth->add_option("--size", size, "frame side in pixels");
  synth_opts["challenges"] =
      synth->add_option("--challenges", challenges, "comma list of blur, debris, foreign, saline or all");
  synth_opts["prob"] = synth->add_option("--challenge-prob", probability, "per-frame chance of blur and saline");

  TrainFlags train_flags;
  std::string ckpt_out = "model.ssck";
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train_flags.add(train, true);
  train->add_option("--out", ckpt_out, "checkpoint path");

  TrainFlags grid_flags;
  std::string lrs = "0.001", batches = "4", grid_report;
  int seeds = 1;
  auto* grid = app.add_subcommand("grid", "grid search over learning rate and batch size");
  grid_flags.add(grid, false);
  grid->add_option("--lrs", lrs, "comma-separated learning rates");
  grid->add_option("--batches", batches, "comma-separated batch sizes");
  grid->add_option("--seeds", seeds, "seeds per cell");
  grid->add_option("--out", ckpt_out, "best checkpoint path");
  grid->add_option("--report", grid_report, "grid summary JSON (default stdout)");

  std::string ckpt_path, eval_data, eval_split = "test", eval_report;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", ckpt_path)->required();
  eval->add_option("--data", eval_data, "dataset index.json")->required();
  eval->add_option("--split", eval_split, "train | val | test");
  eval->add_option("--out", eval_report, "metrics JSON (default stdout)");

  AnnotateFlags ann;
  auto* annotate = app.add_subcommand("annotate-video", "annotate a frame stream with side-by-side panels");
  annotate->add_option("--checkpoint", ann.checkpoint)->required();
  annotate->add_option("--in", ann.input, "frame directory, FRM0 pipe file, or - for stdin")->required();
  annotate->add_option("--gt", ann.gt, "directory of mask_%06d.png ground truth");
  annotate->add_option("--out", ann.out_dir, "write panel_%06d.png here");
  annotate->add_option("--out-pipe", ann.out_pipe, "write panels as an FRM0 stream");
  annotate->add_option("--heatmaps", ann.heatmaps, "write heat_%06d.pmap probability maps here");
  annotate->add_option("--report", ann.report, "fps report JSON (default stdout)");
  annotate->add_option("--mode", ann.mode, "single | pipelined");
  annotate->add_option("--resample", ann.resample, "resample to this frame rate first");
  annotate->add_flag("--timings", ann.timings, "include per-frame timings in the report");

  BenchSettings bench_settings;
  std::string bench_mode = "pipelined", bench_report;
  bool full_res = false;
  auto* bench = app.add_subcommand("bench", "throughput benchmark on synthetic frames");
  bench->add_option("--checkpoint", ckpt_path, "model (default: identity predictor)");
  bench->add_option("--size", bench_settings.frame_size, "frame side in pixels");
  bench->add_option("--frames", bench_settings.n_frames, "frame count (>= 30)");
  bench->add_option("--seed", bench_settings.seed);
  bench->add_option("--mode", bench_mode, "single | pipelined");
  bench->add_flag("--full-res", full_res, "run inference at frame resolution instead of the model size");
  bench->add_option("--report", bench_report, "fps report JSON (default stdout)");

  std::vector<const char*> argv{"stoneseg"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : usage_error;
  }

  try {
    if (*crop) return run_crop(in_dir, out_dir, out);
    if (*rasterize) return run_rasterize(ann_path, out_dir, out);
    if (*split) {
      if (index_path.empty() == videos_path.empty()) throw ConfigError("split: give exactly one of --index or --videos");
      return run_split(index_path, videos_path, out_path, fraction, val_fraction, split_seed, out);
    }
    if (*synth) {
      return run_synth(synth_config, out_dir, videos, frames, synth_opts, synth_seed, size, challenges, probability, out);
    }
    if (*train) return run_train(train_flags, ckpt_out, out);
    if (*grid) return run_grid(grid_flags, lrs, batches, seeds, ckpt_out, grid_report, out);
    if (*eval) return run_eval(ckpt_path, eval_data, eval_split, eval_report, out);
    if (*annotate) return run_annotate(ann, out);
    if (*bench) {
      bench_settings.mode = parse_mode(bench_mode);
      return run_bench(ckpt_path, bench_settings, full_res, bench_report, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return usage_error;
  } catch (const DivergedError& e) {
    err << "diverged: " << e.what() << '\n';
    return diverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return data_error;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return data_error;
  }
  return usage_error;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace stoneseg::cli
