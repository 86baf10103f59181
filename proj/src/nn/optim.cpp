#include "choreoseg/nn/optim.hpp"

#include <cmath>

namespace choreoseg::nn {

AdamState make_adam_state(std::span<const ParamTensor> params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.m.emplace_back(p.value.shape());
    state.v.emplace_back(p.value.shape());
  }
  return state;
}

void adam_step(std::span<ParamTensor> params, AdamState& state) {
  if (params.size() != state.m.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  const AdamConfig& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correct1 = 1.0 - std::pow(c.beta1, t);
  const double correct2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    require_shape(state.m[k], p.value.shape(), "adam first moment");
    auto value = p.value.data();
    const auto grad = p.grad.data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / correct1;
      const double vhat = v[i] / correct2;
      value[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace choreoseg::nn
