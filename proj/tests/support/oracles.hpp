#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "choreoseg/pipeline/metrics.hpp"
#include "choreoseg/rng.hpp"

// Slow, direct reference implementations used to cross-check the library.
namespace choreoseg::testing {

/// Direct window scan: t is kept when p(t) > h, p(t) > p(s) for every s in
/// [t - w/2, t) and p(t) >= p(s) for every s in (t, t + w/2].
std::vector<std::size_t> brute_force_peaks(std::span<const double> p, double h, std::size_t w);

/// Greedy thinning written as a fixed-point over the kept set.
std::vector<std::size_t> brute_force_min_distance(std::span<const std::size_t> peaks, std::size_t d);

/// Quadratic existence matching.
pipeline::Metrics brute_force_metrics(std::span<const std::size_t> est,
                                      std::span<const std::size_t> gt, double tol);

/// Label value at one frame, summing in long double.
double label_at(std::span<const std::vector<std::size_t>> annotators, double sigma, std::size_t t);

/// Random curve generator with plateaus and repeated values, which stress the
/// tie rule.
std::vector<double> random_curve(Rng& rng, std::size_t frames);

/// Sorted distinct frame indices in [0, frames).
std::vector<std::size_t> random_points(Rng& rng, std::size_t frames, std::size_t max_count);

}  // namespace choreoseg::testing
