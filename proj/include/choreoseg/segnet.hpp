#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "choreoseg/audio.hpp"
#include "choreoseg/nn/checkpoint.hpp"
#include "choreoseg/nn/tensor.hpp"
#include "choreoseg/rng.hpp"
#include "json.hpp"

namespace choreoseg::segnet {

/// Network hyperparameters. Defaults:
/// 9 residual blocks, kernel 5, dilation 2^i, dropout 0.1, 67 visual + 16
/// audio channels.
struct ModelConfig {
  std::size_t layers = 9;
  std::size_t kernel = 5;
  double dropout = 0.1;
  std::size_t channels = 83;
  std::size_t visual_out = 67;
  std::size_t audio_out = 16;
  /// One kernel per layer shared by every row instead of per-row kernels.
  bool shared_tcn_kernels = false;

  std::size_t dilation(std::size_t layer) const { return std::size_t{1} << layer; }
  /// Frames on each side of t that can influence output t.
  std::size_t receptive_radius() const;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Per-video tensors the network consumes.
struct NetworkInput {
  std::size_t frames = 0;
  nn::Tensor bones;   // T x 134 normalized bone vectors
  nn::Tensor slices;  // T x 405 (5 x 81 spectrogram slice per frame)
};

/// Builds the input from T x 134 bone features and a normalized spectrogram.
NetworkInput make_input(std::span<const double> bone_features, const audio::MelSpectrogram& spec,
                        double fps);

/// Cached activations of one training forward pass.
struct ForwardTrace {
  std::size_t frames = 0;
  bool training = false;
  // visual head
  nn::Tensor visual_pre;  // T x 67 (pre-ELU)
  // audio block, per-frame buffers stored back to back
  std::vector<double> conv1_pre, pool1_out, conv2_pre, pool2_out, conv3_pre;
  std::vector<std::uint8_t> keep1, keep2, keep3;
  std::vector<std::uint32_t> pool1_idx, pool2_idx;
  // TCN, one entry per block
  struct Block {
    nn::Tensor input, pre1, hidden, pre2;  // C x T
    nn::Tensor w1, w2;                     // effective (weight-normed) kernels
    std::vector<std::uint8_t> keep1, keep2;
  };
  std::vector<Block> blocks;
  nn::Tensor tcn_out;  // C x T
  std::vector<double> probability;
};

class SegNet {
 public:
  /// Uniform fan-in initialization, zero biases, weight-norm gains set to
  /// ||v||. Deterministic per seed.
  explicit SegNet(const ModelConfig& config = {}, std::uint64_t seed = 0);

  static SegNet from_checkpoint(const nn::Checkpoint& ckpt);
  /// Parameters plus the config as a "config" metadata record.
  nn::Checkpoint to_checkpoint() const;

  const ModelConfig& config() const { return config_; }
  std::vector<nn::ParamTensor>& params() { return params_; }
  const std::vector<nn::ParamTensor>& params() const { return params_; }
  nn::ParamTensor& param(std::string_view name);
  const nn::ParamTensor& param(std::string_view name) const;
  void zero_grad();

  // Individual stages (inference mode unless noted).
  /// T x 134 -> T x visual_out, dense + ELU per frame.
  nn::Tensor visual_head(const nn::Tensor& bones) const;
  /// T x 405 -> T x audio_out. Dropout is applied only when training.
  nn::Tensor audio_block(const nn::Tensor& slices, bool training = false, Rng* rng = nullptr) const;
  /// Stacks v (T x 67) over a (T x 16) into X (83 x T).
  static nn::Tensor assemble_input(const nn::Tensor& visual, const nn::Tensor& audio);
  /// Depthwise non-causal residual stack, C x T -> C x T.
  nn::Tensor tcn_forward(const nn::Tensor& x, bool training = false, Rng* rng = nullptr) const;
  /// Column-wise dense C -> 1 followed by the logistic function.
  std::vector<double> probability_head(const nn::Tensor& y) const;

  /// Full inference pass; p(t) in (0, 1).
  std::vector<double> predict(const NetworkInput& input) const;
  /// TCN and probability head on an already assembled X.
  std::vector<double> predict_from_assembled(const nn::Tensor& x) const;

  /// Forward pass that keeps what backward needs. `rng` is required when
  /// training with dropout.
  ForwardTrace forward(const NetworkInput& input, bool training, Rng* rng) const;
  /// Accumulates parameter gradients for dLoss/dp.
  void backward(const ForwardTrace& trace, const NetworkInput& input,
                std::span<const double> dprob);

  /// Intermediate shapes of the audio block: (16,3,26), (16,1,8), (audio_out,1,1).
  static std::vector<nn::Shape> audio_shape_trace();

 private:
  void audio_frame(std::span<const double> slice, std::span<double> out, ForwardTrace* trace,
                   std::size_t frame, bool training, Rng* rng) const;
  nn::Tensor run_tcn(const nn::Tensor& x, bool training, Rng* rng, ForwardTrace* trace) const;
  std::size_t tcn_param(std::size_t block, std::size_t conv, std::size_t which) const;

  ModelConfig config_;
  std::vector<nn::ParamTensor> params_;
};

}  // namespace choreoseg::segnet
