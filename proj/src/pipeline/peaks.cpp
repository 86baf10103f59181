#include "choreoseg/pipeline/peaks.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include "choreoseg/error.hpp"

namespace choreoseg::pipeline {

namespace {

/// out[t] = max of p over the r frames strictly before t (in scan order),
/// -inf when that range is empty. Monotone deque, O(T).
template <class Index>
std::vector<double> trailing_max(std::span<const double> p, std::size_t r, Index at) {
  const std::size_t n = p.size();
  std::vector<double> out(n, -std::numeric_limits<double>::infinity());
  std::deque<std::size_t> dq;  // scan positions, values decreasing
  for (std::size_t s = 0; s < n; ++s) {
    if (s > 0) {
      const double v = p[at(s - 1)];
      while (!dq.empty() && p[at(dq.back())] <= v) dq.pop_back();
      dq.push_back(s - 1);
    }
    while (!dq.empty() && dq.front() + r < s) dq.pop_front();
    if (!dq.empty()) out[at(s)] = p[at(dq.front())];
  }
  return out;
}

}  // namespace

std::vector<std::size_t> pick_peaks(std::span<const double> p, double h, std::size_t w) {
  if (std::isnan(h)) throw ConfigError("peak threshold is NaN");
  const std::size_t r = w / 2;
  const std::size_t n = p.size();
  const auto left = trailing_max(p, r, [](std::size_t s) { return s; });
  const auto right = trailing_max(p, r, [n](std::size_t s) { return n - 1 - s; });
  std::vector<std::size_t> peaks;
  for (std::size_t t = 0; t < n; ++t) {
    if (p[t] > h && p[t] > left[t] && p[t] >= right[t]) peaks.push_back(t);
  }
  return peaks;
}

std::vector<std::size_t> enforce_min_distance(std::span<const std::size_t> peaks, std::size_t d) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    if (i > 0 && peaks[i] <= peaks[i - 1]) throw ConfigError("peaks must be strictly increasing");
    if (kept.empty() || peaks[i] - kept.back() >= d) kept.push_back(peaks[i]);
  }
  return kept;
}

nlohmann::json SegmentationResult::to_json() const {
  return {{"probability", probability}, {"peaks", peaks},         {"threshold", threshold},
          {"window", window},           {"min_distance", min_distance}};
}

SegmentationResult segment_curve(std::vector<double> p, double h, std::size_t w, std::size_t d) {
  SegmentationResult r;
  r.peaks = enforce_min_distance(pick_peaks(p, h, w), d);
  r.probability = std::move(p);
  r.threshold = h;
  r.window = w;
  r.min_distance = d;
  return r;
}

}  // namespace choreoseg::pipeline
