#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "json.hpp"

namespace choreoseg::pipeline {

/// Evaluation defaults.
inline constexpr double kDefaultThreshold = 0.3;
inline constexpr std::size_t kDefaultWindow = 20;
/// Practice-app slider defaults.
inline constexpr double kAppThreshold = 0.25;
inline constexpr std::size_t kAppMinDistance = 60;

/// Frames t with p(t) > h that are the maximum of p over
/// [t - w/2, t + w/2] clipped to the sequence. Among equal values inside a
/// window only the earliest frame survives: p(t) must beat everything to its
/// left strictly and match-or-beat everything to its right. O(T).
std::vector<std::size_t> pick_peaks(std::span<const double> p, double h, std::size_t w);

/// Left-to-right greedy thinning: the first peak is kept, later peaks are kept
/// only when at least `d` frames after the last kept one. Peaks must be
/// increasing.
std::vector<std::size_t> enforce_min_distance(std::span<const std::size_t> peaks, std::size_t d);

struct SegmentationResult {
  std::vector<double> probability;
  std::vector<std::size_t> peaks;
  double threshold = kDefaultThreshold;
  std::size_t window = kDefaultWindow;
  std::size_t min_distance = 0;

  /// {"probability", "peaks", "threshold", "window", "min_distance"}.
  nlohmann::json to_json() const;
};

/// pick_peaks followed by enforce_min_distance.
SegmentationResult segment_curve(std::vector<double> p, double h, std::size_t w, std::size_t d);

}  // namespace choreoseg::pipeline
