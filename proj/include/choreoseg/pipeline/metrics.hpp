#pragma once

#include <cstddef>
#include <span>

namespace choreoseg::pipeline {

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

/// 2PR / (P + R), or 0 when P + R is 0.
double f_measure(double precision, double recall);

/// Existence-based matching: an estimate counts as correct when some ground
/// truth point lies within `tolerance` frames, and a ground truth point counts
/// as found when some estimate does. No one-to-one assignment. With no
/// estimates precision is 1; with no ground truth recall is 1.
Metrics evaluate(std::span<const std::size_t> est, std::span<const std::size_t> gt,
                 double tolerance);

}  // namespace choreoseg::pipeline
