#include "choreoseg/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "choreoseg/error.hpp"

namespace choreoseg::nn {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "pass" : "FAIL") << ": max rel err " << max_rel_error << " (tol " << tolerance
     << ") over " << checked << " entries; worst #" << worst_index << " analytic "
     << worst_analytic << " numeric " << worst_numeric;
  return os.str();
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<double> inputs,
                           std::span<const double> analytic, double tolerance,
                           std::span<const std::size_t> indices, double step) {
  if (analytic.size() != inputs.size()) {
    throw ShapeError("grad_check: analytic gradient length differs from input length");
  }
  GradCheckReport report;
  report.tolerance = tolerance;
  auto check_one = [&](std::size_t i) {
    const double saved = inputs[i];
    inputs[i] = saved + step;
    const double up = loss();
    inputs[i] = saved - step;
    const double down = loss();
    inputs[i] = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    // NaN compares false, so it always replaces the current worst.
    if (report.checked == 1 || !(rel <= report.max_rel_error)) {
      report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < inputs.size(); ++i) check_one(i);
  } else {
    for (std::size_t i : indices) check_one(i);
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

void merge_reports(GradCheckReport& into, const GradCheckReport& other) {
  if (into.checked == 0 || other.max_rel_error > into.max_rel_error) {
    into.max_rel_error = other.max_rel_error;
    into.worst_index = other.worst_index;
    into.worst_analytic = other.worst_analytic;
    into.worst_numeric = other.worst_numeric;
  }
  into.checked += other.checked;
  into.tolerance = std::max(into.tolerance, other.tolerance);
  into.passed = into.passed && other.passed;
}

}  // namespace choreoseg::nn
