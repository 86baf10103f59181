#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

namespace choreoseg::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = true;

  std::string summary() const;
};

/// Default step for central differences in double precision.
inline constexpr double kGradCheckStep = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
inline constexpr double kGradCheckFloor = 1e-6;

/// Compares `analytic` against central differences of `loss` with respect to
/// `inputs`, which are perturbed in place and restored. Relative error is
/// |a - n| / max(|a|, |n|, floor). `indices` restricts the check to a subset
/// (all entries when empty).
GradCheckReport grad_check(const std::function<double()>& loss, std::span<double> inputs,
                           std::span<const double> analytic, double tolerance,
                           std::span<const std::size_t> indices = {},
                           double step = kGradCheckStep);

/// Folds `other` into `into` (max error wins, counts add).
void merge_reports(GradCheckReport& into, const GradCheckReport& other);

}  // namespace choreoseg::nn
