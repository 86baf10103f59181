#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "choreoseg/nn/tensor.hpp"

namespace choreoseg::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one pair per parameter in registration order.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step_count = 0;
};

AdamState make_adam_state(std::span<const ParamTensor> params, const AdamConfig& config = {});

/// One bias-corrected Adam update from the accumulated gradients.
void adam_step(std::span<ParamTensor> params, AdamState& state);

}  // namespace choreoseg::nn
