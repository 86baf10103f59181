#include "choreoseg/pipeline/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "choreoseg/error.hpp"
#include "choreoseg/keypoint_io.hpp"
#include "choreoseg/rng.hpp"

namespace choreoseg::pipeline {

namespace fs = std::filesystem;
using skeleton::kNumKeypoints;
using skeleton::Point;

void SynthConfig::validate() const {
  if (videos == 0) throw ConfigError("synth: videos must be positive");
  if (!(fps > 0.0) || !(tempo_bpm > 0.0)) throw ConfigError("synth: fps and tempo must be positive");
  if (annotators == 0) throw ConfigError("synth: at least one annotator required");
  if (sample_rate < 34000.0) throw ConfigError("synth: sample rate must be at least 34 kHz");
  const double beat = fps * 60.0 / tempo_bpm;
  if (double(frames) < 8.0 * beat) throw ConfigError("synth: need at least 8 beats of video");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw ConfigError("synth: missing_rate in [0, 1)");
  if (!(disagreement_rate >= 0.0 && disagreement_rate <= 1.0)) {
    throw ConfigError("synth: disagreement_rate in [0, 1]");
  }
}

namespace {

constexpr double kClickDecay = 0.015;    // seconds
constexpr double kClickLength = 0.08;    // seconds
constexpr double kNoiseAmplitude = 0.01;

audio::Waveform make_audio(const SynthConfig& cfg, double c0, double seconds, Rng& rng) {
  audio::Waveform w;
  w.sample_rate = cfg.sample_rate;
  const auto n = static_cast<std::size_t>(std::ceil(seconds * cfg.sample_rate));
  w.samples.resize(n);
  for (double& s : w.samples) s = rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
  const double freq = rng.uniform(300.0, 2000.0);
  const double beat = 60.0 / cfg.tempo_bpm;
  for (std::size_t k = 0;; ++k) {
    const double start = c0 + beat * double(k);
    const auto first = static_cast<std::size_t>(std::llround(start * cfg.sample_rate));
    if (first >= n) break;
    const double amp = k == 0 ? 0.9 : rng.uniform(0.6, 0.9);
    const auto len = static_cast<std::size_t>(kClickLength * cfg.sample_rate);
    for (std::size_t i = 0; i < len && first + i < n; ++i) {
      const double t = double(i) / cfg.sample_rate;
      w.samples[first + i] += amp * std::exp(-t / kClickDecay) * std::cos(2.0 * std::numbers::pi * freq * t);
    }
  }
  // WAV output is limited to full scale.
  for (double& s : w.samples) s = std::clamp(s, -1.0, 1.0);
  return w;
}

}  // namespace

SynthVideo synth_video(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, index));
  SynthVideo v;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%03zu", index);
  v.category = index % 7 == 6 ? Category::Advanced : Category::Basic;

  const double beat_frames = cfg.fps * 60.0 / cfg.tempo_bpm;
  const double seconds = double(cfg.frames) / cfg.fps;
  const double c0 = rng.uniform(0.3, 0.8);
  v.wave = make_audio(cfg, c0, seconds, rng);

  v.meta.video_id = id;
  v.meta.fps = cfg.fps;
  v.meta.tempo_bpm = cfg.tempo_bpm;
  v.meta.onset_c0 = audio::detect_onset(v.wave);
  v.meta.total_frames = cfg.frames;
  std::vector<std::size_t> beat_frame;
  for (std::size_t k = 0;; ++k) {
    const double f = std::round((v.meta.onset_c0 + double(k) * 60.0 / cfg.tempo_bpm) * cfg.fps);
    if (f >= double(cfg.frames)) break;
    beat_frame.push_back(static_cast<std::size_t>(f));
  }
  v.meta.n_beats = beat_frame.size();

  for (std::size_t k = 2 + rng.index(2); k + 2 < beat_frame.size(); k += 2 + rng.index(3)) {
    v.boundaries.push_back(beat_frame[k]);
  }

  // Pose: random rigid layout around a center, rotated by pi per boundary.
  std::array<Point, kNumKeypoints> base{};
  std::array<double, kNumKeypoints> phase{};
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    base[i] = {rng.uniform(-120.0, 120.0), rng.uniform(-180.0, 180.0)};
    phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  const double wobble_period = beat_frames * rng.uniform(1.5, 3.0);
  const Point center{rng.uniform(500.0, 800.0), rng.uniform(300.0, 420.0)};
  std::size_t flips = 0;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    while (flips < v.boundaries.size() && v.boundaries[flips] <= t) ++flips;
    const double theta = std::numbers::pi * double(flips) +
                         0.25 * std::sin(2.0 * std::numbers::pi * double(t) / wobble_period);
    const double c = std::cos(theta), s = std::sin(theta);
    skeleton::RawDetectionFrame frame;
    frame.frame_index = t;
    skeleton::PersonDetection dancer;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      const double wob = 6.0 * std::sin(2.0 * std::numbers::pi * double(t) / wobble_period + phase[i]);
      const double x = base[i].x + wob, y = base[i].y - wob;
      dancer.keypoints[i] = {center.x + c * x - s * y + rng.normal(0.0, 0.5),
                             center.y + s * x + c * y + rng.normal(0.0, 0.5)};
      dancer.confidences[i] = rng.uniform() < cfg.missing_rate ? 0.0 : rng.uniform(0.6, 1.0);
    }
    frame.persons.push_back(dancer);
    if (rng.uniform() < 0.1) {
      // A low-confidence bystander the dancer selection must ignore.
      skeleton::PersonDetection other;
      for (std::size_t i = 0; i < kNumKeypoints; ++i) {
        other.keypoints[i] = {rng.uniform(0.0, 1280.0), rng.uniform(0.0, 720.0)};
        other.confidences[i] = rng.uniform(0.05, 0.3);
      }
      frame.persons.insert(frame.persons.begin() + rng.index(2), other);
    }
    v.detections.push_back(std::move(frame));
  }

  // Annotators.
  v.annotations.meta = v.meta;
  v.annotations.annotators.resize(cfg.annotators);
  for (std::size_t a = 0; a < cfg.annotators; ++a) v.annotations.annotators[a].id = "annotator" + std::to_string(a);
  const auto half_beat = static_cast<std::size_t>(std::llround(beat_frames / 2.0));
  for (std::size_t b : v.boundaries) {
    std::size_t deviant = cfg.annotators;  // none
    int shift = 0;
    bool skip = false;
    if (cfg.annotators > 1 && rng.uniform() < cfg.disagreement_rate) {
      deviant = 1 + rng.index(cfg.annotators - 1);
      const double kind = rng.uniform();
      skip = kind < 0.2;
      shift = kind < 0.6 ? -1 : 1;
    }
    for (std::size_t a = 0; a < cfg.annotators; ++a) {
      std::size_t p = b;
      if (a == deviant) {
        if (skip) continue;
        p = shift < 0 ? b - std::min(b, half_beat) : std::min(b + half_beat, cfg.frames - 1);
      }
      v.annotations.annotators[a].points_frames.push_back(p);
    }
  }
  return v;
}

DatasetIndex write_synth_dataset(const SynthConfig& cfg, const fs::path& dir) {
  cfg.validate();
  fs::create_directories(dir);
  DatasetIndex index;
  for (std::size_t i = 0; i < cfg.videos; ++i) {
    const SynthVideo v = synth_video(cfg, i);
    const fs::path vdir = dir / v.meta.video_id;
    fs::create_directories(vdir);
    DatasetEntry e;
    e.video_id = v.meta.video_id;
    e.category = v.category;
    e.meta = v.meta;
    e.keypoints = vdir / "keypoints.jsonl";
    e.audio = vdir / "audio.wav";
    e.annotations = vdir / "annotations.json";
    {
      std::ofstream out(e.keypoints);
      if (!out) throw Error("cannot write " + e.keypoints.string());
      skeleton::write_keypoints_jsonl(out, v.detections);
    }
    audio::write_wav(e.audio, v.wave);
    labels::write_annotations(e.annotations, v.annotations);
    index.entries.push_back(std::move(e));
  }
  index.save(dir / "index.json");
  return index;
}

}  // namespace choreoseg::pipeline
