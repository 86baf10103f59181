#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "choreoseg/audio.hpp"
#include "choreoseg/labels.hpp"
#include "choreoseg/pipeline/dataset.hpp"
#include "choreoseg/skeleton.hpp"

namespace choreoseg::pipeline {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t videos = 40;
  std::size_t frames = 1200;
  double fps = 60.0;
  double tempo_bpm = 120.0;
  std::size_t annotators = 3;
  double sample_rate = 44100.0;
  /// Probability that a keypoint is reported with confidence 0.
  double missing_rate = 0.02;
  /// Probability that one non-reference annotator deviates at a boundary.
  double disagreement_rate = 0.4;

  void validate() const;
};

/// A generated video with its planted structure.
///
/// The dancer's skeleton is a random rigid pose with small sinusoidal
/// per-keypoint wobble; at every planted boundary the whole pose turns by pi,
/// reversing every bone vector. Boundaries sit on beats, 2 to 4 beats apart.
/// The audio carries a decaying click on every beat with the first one above
/// amplitude 0.5. Annotator 0 marks every boundary exactly; at each boundary
/// at most one other annotator shifts it by half a beat or skips it.
struct SynthVideo {
  labels::VideoMeta meta;
  Category category = Category::Basic;
  std::vector<skeleton::RawDetectionFrame> detections;
  audio::Waveform wave;
  labels::AnnotationSet annotations;
  std::vector<std::size_t> boundaries;  // planted boundary frames
};

SynthVideo synth_video(const SynthConfig& cfg, std::size_t index);

/// Writes <dir>/<id>/{keypoints.jsonl, audio.wav, annotations.json} for each
/// video and <dir>/index.json; returns the index.
DatasetIndex write_synth_dataset(const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace choreoseg::pipeline
