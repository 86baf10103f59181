#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace choreoseg::labels {

/// Per-video metadata needed for candidates and labels.
struct VideoMeta {
  std::string video_id;
  double fps = 60.0;
  double tempo_bpm = 120.0;
  std::size_t n_beats = 16;
  double onset_c0 = 0.0;  // seconds
  std::size_t total_frames = 0;

  /// Throws ConfigError on non-positive fps/tempo/n_beats or a negative onset.
  void validate() const;
  double beat_frames() const { return fps * 60.0 / tempo_bpm; }

  nlohmann::json to_json() const;
  static VideoMeta from_json(const nlohmann::json& j);
};

/// c_i = c0 + (60 / tempo) * i / 2 for i in [0, 2 n_beats): beats at even i,
/// half-beats at odd i. Seconds.
std::vector<double> candidates(const VideoMeta& meta);
/// Candidate times as frame indices, round(c_i * fps).
std::vector<std::size_t> candidate_frames(const VideoMeta& meta);

/// One third of a beat, in frames.
double sigma_frames(const VideoMeta& meta);
/// Half a beat, in frames: the matching tolerance used in evaluation.
double tolerance_frames(const VideoMeta& meta);

/// l(t) = min(1, sum_j exp(-(t - t_j)^2 / (2 sigma^2))) for t in [0, frames).
std::vector<double> annotation_label(std::span<const std::size_t> points, double sigma,
                                     std::size_t frames);

struct SegmentationLabel {
  std::vector<double> values;
  double sigma_frames = 0.0;
};

/// Mean of the per-annotator curves. Throws ConfigError when `annotators` is
/// empty or sigma is not positive.
SegmentationLabel ground_truth(std::span<const std::vector<std::size_t>> annotators, double sigma,
                               std::size_t frames);

/// Throws ConfigError unless `points` is strictly increasing and inside
/// [0, frames).
void validate_points(std::span<const std::size_t> points, std::size_t frames);

/// Grid b = 1, 1.5, ..., n_beats (2 n_beats - 1 points).
std::vector<double> proportion_grid(std::size_t n_beats);

/// Fraction of participants whose selection contains each grid beat.
/// Selections are beat positions; values off the half-beat grid or outside
/// [1, n_beats] throw ConfigError.
std::vector<double> segmentation_proportion(std::span<const std::vector<double>> selections,
                                            std::size_t n_beats);

struct Annotator {
  std::string id;
  std::vector<std::size_t> points_frames;
};

/// Contents of an annotation file.
struct AnnotationSet {
  VideoMeta meta;
  std::vector<Annotator> annotators;

  std::vector<std::vector<std::size_t>> point_lists() const;
  /// Ground truth over meta.total_frames with sigma from the tempo.
  SegmentationLabel label() const;

  nlohmann::json to_json() const;
  /// Throws ParseError on malformed input and ConfigError on invalid values.
  static AnnotationSet from_json(const nlohmann::json& j);
};

AnnotationSet read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const AnnotationSet& set);

/// CSV with header "frame,<column>" and shortest round-trip values.
void write_label_csv(std::ostream& out, std::span<const double> values,
                     std::string_view column = "label");

}  // namespace choreoseg::labels
