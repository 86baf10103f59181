#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "choreoseg/nn/gradcheck.hpp"
#include "choreoseg/segnet.hpp"

namespace choreoseg::testing {

inline constexpr double kKernelTolerance = 1e-4;
inline constexpr double kNetworkTolerance = 1e-3;

struct NamedReport {
  std::string name;
  nn::GradCheckReport report;
};

/// Central-difference checks of every kernel backward pass against a random
/// linear functional of its output.
std::vector<NamedReport> kernel_gradient_checks(std::uint64_t seed);

struct NetworkGradReport : NamedReport {
  /// Probes skipped because a max-pool selection changed within +-step.
  std::size_t seam_probes = 0;
};

/// End-to-end check of the assembled network in training mode (fixed dropout
/// masks) on random T-frame inputs: every parameter tensor is probed at up to
/// `per_tensor` distinct entries. One report per parameter tensor.
std::vector<NetworkGradReport> network_gradient_check(std::size_t frames, std::uint64_t seed,
                                                std::size_t per_tensor,
                                                const segnet::ModelConfig& cfg = {});

}  // namespace choreoseg::testing
