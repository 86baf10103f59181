#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <optional>

#include "choreoseg/audio.hpp"
#include "choreoseg/error.hpp"
#include "choreoseg/keypoint_io.hpp"
#include "choreoseg/labels.hpp"
#include "choreoseg/nn/checkpoint.hpp"
#include "choreoseg/pipeline/dataset.hpp"
#include "choreoseg/pipeline/features.hpp"
#include "choreoseg/pipeline/peaks.hpp"
#include "choreoseg/pipeline/synth.hpp"
#include "choreoseg/pipeline/train.hpp"
#include "choreoseg/rng.hpp"
#include "choreoseg/service.hpp"

namespace fs = std::filesystem;
using namespace choreoseg;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// --- features --------------------------------------------------------------

struct FeaturesArgs {
  fs::path index, out_dir;
  fs::path keypoints, audio, out_prefix;
  bool alphapose = false;
  double fps = 0.0;
  std::size_t frames = 0;
};

void run_features(const FeaturesArgs& a) {
  if (!a.index.empty()) {
    auto index = pipeline::DatasetIndex::load(a.index);
    const fs::path out = a.out_dir.empty() ? a.index.parent_path() / "features" : a.out_dir;
    pipeline::extract_index_features(index, out);
    index.save(a.index);
    std::cout << "features for " << index.entries.size() << " videos written to " << out.string() << '\n';
    return;
  }
  if (a.keypoints.empty() || a.audio.empty() || a.out_prefix.empty() || !(a.fps > 0.0)) {
    throw ConfigError("features needs --index, or --keypoints, --audio, --fps and --out");
  }
  std::vector<skeleton::RawDetectionFrame> detections;
  if (a.alphapose) {
    std::ifstream in(a.keypoints);
    if (!in) throw ParseError("cannot open " + a.keypoints.string());
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError(a.keypoints.string() + ": " + e.what());
    }
    detections = skeleton::import_alphapose(j);
  } else {
    detections = skeleton::read_keypoints_jsonl(a.keypoints);
  }
  const auto f = pipeline::extract_features(detections, audio::read_wav(a.audio), a.fps, a.frames);
  const fs::path bones = a.out_prefix.string() + ".bones";
  const fs::path spec = a.out_prefix.string() + ".spec";
  pipeline::save_features(f, bones, spec);
  std::cout << f.frames() << " frames -> " << bones.string() << ", " << spec.string() << '\n';
}

// --- split -----------------------------------------------------------------

void run_split(const fs::path& index_path, std::uint64_t seed, const fs::path& out) {
  const auto index = pipeline::DatasetIndex::load(index_path);
  const auto divisions = pipeline::split_dataset(index, seed);
  json j = json::array();
  for (const auto& d : divisions) j.push_back(d.to_json());
  const std::string text = json{{"seed", seed}, {"divisions", j}}.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
    std::cout << divisions.size() << " divisions of " << index.entries.size() << " videos ("
              << divisions[0].train.size() << "/" << divisions[0].val.size() << "/"
              << divisions[0].test.size() << ") written to " << out.string() << '\n';
  }
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  fs::path index, config, out = "model.ckpt", history;
  std::optional<std::size_t> division, max_epochs;
  std::optional<std::uint64_t> seed, split_seed;
};

void run_train(const TrainArgs& a) {
  auto cfg = a.config.empty() ? pipeline::RunConfig{} : pipeline::RunConfig::load(a.config);
  if (a.division) cfg.train.division = *a.division;
  if (a.max_epochs) cfg.train.max_epochs = *a.max_epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.split_seed) cfg.train.split_seed = *a.split_seed;
  cfg.train.validate();

  const auto index = pipeline::DatasetIndex::load(a.index);
  index.require_files();
  const auto division = pipeline::split_dataset(index, cfg.train.split_seed)[cfg.train.division];
  const auto train_set = pipeline::load_videos(index, division.train);
  const auto val_set = pipeline::load_videos(index, division.val);
  std::cout << "division " << cfg.train.division << ": " << train_set.size() << " train, "
            << val_set.size() << " val\n";

  segnet::SegNet model(cfg.model, derive_seed(cfg.train.seed, 0));
  const auto result = pipeline::train(model, train_set, val_set, cfg.train, [](const pipeline::EpochRecord& r) {
    std::cout << "epoch " << r.epoch << "  train " << r.train_loss << "  val " << r.val_loss
              << (r.improved ? "  *" : "") << std::endl;
  });
  auto ckpt = result.model.to_checkpoint();
  ckpt.metadata["train"] = cfg.train.to_json().dump();
  ckpt.metadata["history"] = result.history_json().dump();
  nn::write_checkpoint(a.out, ckpt);
  if (!a.history.empty()) write_text(a.history, result.history_json().dump(2) + "\n");
  std::cout << "best epoch " << result.best_epoch << " (val " << result.best_val_loss << ") -> "
            << a.out.string() << '\n';
}

// --- segment ---------------------------------------------------------------

struct SegmentArgs {
  fs::path model, bones, spectrogram, index, csv, peaks;
  std::string id;
  double fps = 0.0;
  double h = pipeline::kDefaultThreshold;
  std::size_t w = pipeline::kDefaultWindow;
  std::size_t d = 0;
};

void run_segment(const SegmentArgs& a) {
  const auto model = segnet::SegNet::from_checkpoint(nn::read_checkpoint(a.model));
  pipeline::VideoFeatures f;
  double fps = a.fps;
  if (!a.index.empty()) {
    if (a.id.empty()) throw ConfigError("--index needs --id");
    const auto index = pipeline::DatasetIndex::load(a.index);
    const auto& e = index.find(a.id);
    f = pipeline::load_features(e.bones, e.spectrogram);
    fps = e.meta.fps;
  } else {
    if (a.bones.empty() || a.spectrogram.empty()) {
      throw ConfigError("segment needs --bones and --spectrogram, or --index and --id");
    }
    f = pipeline::load_features(a.bones, a.spectrogram);
    if (!(fps > 0.0)) fps = f.fps;
  }
  auto p = model.predict(segnet::make_input(f.bones, f.spectrogram, fps));
  const auto result = pipeline::segment_curve(std::move(p), a.h, a.w, a.d);
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw Error("cannot write " + a.csv.string());
    labels::write_label_csv(out, result.probability, "probability");
  }
  const std::string peaks = json{{"peaks", result.peaks},
                                 {"threshold", result.threshold},
                                 {"window", result.window},
                                 {"min_distance", result.min_distance}}
                                .dump(2) + "\n";
  if (a.peaks.empty()) {
    std::cout << peaks;
  } else {
    write_text(a.peaks, peaks);
  }
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  fs::path model, index, out;
  std::size_t division = 0;
  std::uint64_t split_seed = 0;
  std::string part = "test";
  double h = pipeline::kDefaultThreshold;
  std::size_t w = pipeline::kDefaultWindow;
};

void run_eval(const EvalArgs& a) {
  const auto model = segnet::SegNet::from_checkpoint(nn::read_checkpoint(a.model));
  const auto index = pipeline::DatasetIndex::load(a.index);
  index.require_files();
  if (a.division >= pipeline::kDivisionCount) throw ConfigError("division must lie in [0, 10)");
  const auto d = pipeline::split_dataset(index, a.split_seed)[a.division];
  const auto& ids = a.part == "train" ? d.train : a.part == "val" ? d.val : d.test;
  const auto videos = pipeline::load_videos(index, ids);
  const auto report = pipeline::run_eval(model, videos, a.h, a.w);
  const std::string text = report.to_json().dump(2) + "\n";
  if (!a.out.empty()) write_text(a.out, text);
  std::cout << a.part << " videos " << videos.size() << "  P " << report.precision << "  R "
            << report.recall << "  F " << report.f_measure << "  loss " << report.test_loss << '\n';
}

// --- synth -----------------------------------------------------------------

void run_synth(const pipeline::SynthConfig& cfg, const fs::path& out, bool features) {
  auto index = pipeline::write_synth_dataset(cfg, out);
  if (features) {
    pipeline::extract_index_features(index, out / "features");
    index.save(out / "index.json");
  }
  std::cout << index.entries.size() << " synthetic videos in " << (out / "index.json").string() << '\n';
}

// --- serve -----------------------------------------------------------------

service::Service* g_service = nullptr;

void handle_signal(int) {
  if (g_service != nullptr) g_service->stop();
}

int run_serve(const std::string& addr, const fs::path& model, const fs::path& data) {
  service::ServiceConfig cfg;
  cfg.apply_env();
  if (!addr.empty()) cfg.set_address(addr);
  if (!model.empty()) cfg.model_path = model;
  if (!data.empty()) cfg.data_dir = data;
  service::Service svc(cfg);
  const int port = svc.bind();
  if (port < 0) throw Error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  g_service = &svc;
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  std::cout << "listening on " << cfg.host << ":" << port << (svc.has_model() ? "" : " (no model loaded)")
            << std::endl;
  const bool ok = svc.listen_after_bind();
  g_service = nullptr;
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dance choreography segmentation: features, training, evaluation and serving"};
  app.require_subcommand(1);

  FeaturesArgs fa;
  auto* features = app.add_subcommand("features", "Compute bone and spectrogram caches");
  features->add_option("--index", fa.index, "Dataset index to process in place");
  features->add_option("--out-dir", fa.out_dir, "Cache directory for --index (default: <index dir>/features)");
  features->add_option("--keypoints", fa.keypoints, "Keypoints JSONL (or AlphaPose JSON with --alphapose)");
  features->add_flag("--alphapose", fa.alphapose, "Read --keypoints as AlphaPose results");
  features->add_option("--audio", fa.audio, "WAV file");
  features->add_option("--fps", fa.fps, "Video frame rate");
  features->add_option("--frames", fa.frames, "Total frame count (default: from keypoints)");
  features->add_option("--out", fa.out_prefix, "Output prefix; writes <prefix>.bones and <prefix>.spec");

  fs::path split_index, split_out;
  std::uint64_t split_seed = 0;
  auto* split = app.add_subcommand("split", "Ten stratified 3:1:1 divisions");
  split->add_option("--index", split_index, "Dataset index")->required();
  split->add_option("--seed", split_seed, "Split seed");
  split->add_option("--out", split_out, "Output JSON (default: stdout)");

  TrainArgs ta;
  std::size_t train_division = 0, train_epochs = 0;
  std::uint64_t train_seed = 0, train_split_seed = 0;
  auto* train = app.add_subcommand("train", "Train with early stopping on one division");
  train->add_option("--index", ta.index, "Dataset index with features")->required();
  train->add_option("--config", ta.config, "JSON with \"model\" and \"train\" sections");
  auto* opt_div = train->add_option("--division", train_division, "Division index 0-9");
  auto* opt_epochs = train->add_option("--max-epochs", train_epochs, "Epoch cap");
  auto* opt_seed = train->add_option("--seed", train_seed, "Training seed");
  auto* opt_split = train->add_option("--split-seed", train_split_seed, "Split seed");
  train->add_option("--out", ta.out, "Checkpoint path");
  train->add_option("--history", ta.history, "Write per-epoch history JSON");

  SegmentArgs sa;
  auto* segment = app.add_subcommand("segment", "Predict p(t) and pick segmentation points");
  segment->add_option("--model", sa.model, "Checkpoint")->required();
  segment->add_option("--bones", sa.bones, "Bone cache");
  segment->add_option("--spectrogram", sa.spectrogram, "Spectrogram cache");
  segment->add_option("--fps", sa.fps, "Frame rate (default: from the bone cache)");
  segment->add_option("--index", sa.index, "Dataset index (with --id)");
  segment->add_option("--id", sa.id, "Video id in --index");
  segment->add_option("--threshold", sa.h, "Peak threshold h");
  segment->add_option("--window", sa.w, "Peak window w (frames)");
  segment->add_option("--min-distance", sa.d, "Minimum distance d between points (frames)");
  segment->add_option("--csv", sa.csv, "Write frame,probability CSV");
  segment->add_option("--peaks", sa.peaks, "Write peaks JSON (default: stdout)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Precision, recall, F and loss on a division part");
  eval->add_option("--model", ea.model, "Checkpoint")->required();
  eval->add_option("--index", ea.index, "Dataset index with features")->required();
  eval->add_option("--division", ea.division, "Division index 0-9");
  eval->add_option("--split-seed", ea.split_seed, "Split seed");
  eval->add_option("--part", ea.part, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--threshold", ea.h, "Peak threshold h");
  eval->add_option("--window", ea.w, "Peak window w (frames)");
  eval->add_option("--out", ea.out, "Write the full report JSON");

  pipeline::SynthConfig sc;
  fs::path synth_out;
  bool synth_features = false;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with planted boundaries");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--seed", sc.seed, "Generator seed");
  synth->add_option("--videos", sc.videos, "Number of videos");
  synth->add_option("--frames", sc.frames, "Frames per video");
  synth->add_option("--fps", sc.fps, "Frame rate");
  synth->add_option("--tempo", sc.tempo_bpm, "Tempo (BPM)");
  synth->add_flag("--features", synth_features, "Also compute feature caches");

  std::string serve_addr;
  fs::path serve_model, serve_data;
  auto* serve = app.add_subcommand("serve", "HTTP inference and annotation service");
  serve->add_option("--addr", serve_addr, "host:port (env CHOREOSEG_ADDR, default 127.0.0.1:8080)");
  serve->add_option("--model", serve_model, "Checkpoint (env CHOREOSEG_MODEL)");
  serve->add_option("--data", serve_data, "Data directory (env CHOREOSEG_DATA)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*features) run_features(fa);
    if (*split) run_split(split_index, split_seed, split_out);
    if (*train) {
      if (*opt_div) ta.division = train_division;
      if (*opt_epochs) ta.max_epochs = train_epochs;
      if (*opt_seed) ta.seed = train_seed;
      if (*opt_split) ta.split_seed = train_split_seed;
      run_train(ta);
    }
    if (*segment) run_segment(sa);
    if (*eval) run_eval(ea);
    if (*synth) run_synth(sc, synth_out, synth_features);
    if (*serve) return run_serve(serve_addr, serve_model, serve_data);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const OnsetNotFoundError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
