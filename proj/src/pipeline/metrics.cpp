#include "choreoseg/pipeline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "choreoseg/error.hpp"

namespace choreoseg::pipeline {

namespace {

/// Fraction of `from` with some element of sorted `to` within tol.
double hit_fraction(std::span<const std::size_t> from, const std::vector<std::size_t>& to,
                    double tol) {
  if (from.empty()) return 1.0;
  std::size_t hits = 0;
  for (std::size_t x : from) {
    const auto it = std::lower_bound(to.begin(), to.end(), x);
    bool hit = false;
    if (it != to.end() && double(*it - x) <= tol) hit = true;
    if (!hit && it != to.begin() && double(x - *std::prev(it)) <= tol) hit = true;
    hits += hit ? 1 : 0;
  }
  return double(hits) / double(from.size());
}

}  // namespace

double f_measure(double precision, double recall) {
  const double sum = precision + recall;
  return sum > 0.0 ? 2.0 * precision * recall / sum : 0.0;
}

Metrics evaluate(std::span<const std::size_t> est, std::span<const std::size_t> gt,
                 double tolerance) {
  if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be non-negative");
  std::vector<std::size_t> est_sorted(est.begin(), est.end());
  std::vector<std::size_t> gt_sorted(gt.begin(), gt.end());
  std::sort(est_sorted.begin(), est_sorted.end());
  std::sort(gt_sorted.begin(), gt_sorted.end());
  Metrics m;
  m.precision = hit_fraction(est, gt_sorted, tolerance);
  m.recall = hit_fraction(gt, est_sorted, tolerance);
  m.f_measure = f_measure(m.precision, m.recall);
  return m;
}

}  // namespace choreoseg::pipeline
