#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "choreoseg/nn/tensor.hpp"
#include "choreoseg/rng.hpp"

// Forward/backward kernel pairs for the segmentation network. Backward
// functions accumulate (+=) into parameter gradients and into dx spans; callers
// zero them first. All reductions accumulate in double.
namespace choreoseg::nn {

// --- dense -----------------------------------------------------------------

/// y = W x + b for W [out x in].
void dense_forward(std::span<const double> x, const Tensor& W, const Tensor& b, std::span<double> y);
/// x is [in] or [rows x in]; returns [out] or [rows x out].
Tensor dense_forward(const Tensor& x, const Tensor& W, const Tensor& b);

/// Accumulates dW, db, and dx (skipped when dx is empty).
void dense_backward(std::span<const double> x, const Tensor& W, std::span<const double> dy,
                    std::span<double> dx, Tensor& dW, Tensor& db);
Tensor dense_backward(const Tensor& x, const Tensor& W, const Tensor& dy, Tensor& dW, Tensor& db);

// --- non-causal dilated 1-D convolution -------------------------------------

/// y(t) = sum_j k[j] x(t + (j - (K-1)/2) * dilation), zero outside [0, T).
/// K must be odd; throws ConfigError otherwise.
void conv1d_dilated_forward(std::span<const double> x, std::span<const double> kernel,
                            std::size_t dilation, std::span<double> y);
Tensor conv1d_dilated_forward(const Tensor& x, const Tensor& kernel, std::size_t dilation);

void conv1d_dilated_backward(std::span<const double> x, std::span<const double> kernel,
                             std::size_t dilation, std::span<const double> dy,
                             std::span<double> dx, std::span<double> dkernel);

// --- 2-D convolution and pooling --------------------------------------------

struct Conv2dGeometry {
  std::size_t in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;

  std::size_t out_height() const { return height - kernel_h + 1; }
  std::size_t out_width() const { return width - kernel_w + 1; }
  std::size_t in_size() const { return in_channels * height * width; }
  std::size_t out_size() const { return out_channels * out_height() * out_width(); }
  /// Throws ShapeError when the kernel does not fit.
  void validate() const;
};

/// Valid cross-correlation. x [C x H x W], weights [O x C x KH x KW], bias [O].
void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x, const Tensor& weights,
                    const Tensor& bias, std::span<double> y);
Tensor conv2d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);

/// dx skipped when empty.
void conv2d_backward(const Conv2dGeometry& g, std::span<const double> x, const Tensor& weights,
                     std::span<const double> dy, std::span<double> dx, Tensor& dweights,
                     Tensor& dbias);

struct PoolGeometry {
  std::size_t channels, height, width;
  std::size_t window_h, window_w;  // stride equals the window

  std::size_t out_height() const { return height / window_h; }
  std::size_t out_width() const { return width / window_w; }
  std::size_t out_size() const { return channels * out_height() * out_width(); }
  void validate() const;
};

/// Non-overlapping max pooling; `argmax` receives the input index of each
/// output (first index on ties).
void maxpool2d_forward(const PoolGeometry& g, std::span<const double> x, std::span<double> y,
                       std::span<std::uint32_t> argmax);
Tensor maxpool2d_forward(const Tensor& x, std::size_t window_h, std::size_t window_w,
                         std::vector<std::uint32_t>* argmax = nullptr);

/// Routes dy to the recorded argmax positions (accumulates into dx).
void maxpool2d_backward(std::span<const double> dy, std::span<const std::uint32_t> argmax,
                        std::span<double> dx);

// --- activations -----------------------------------------------------------

inline constexpr double kEluAlpha = 1.0;

void elu_forward(std::span<const double> x, std::span<double> y);
Tensor elu_forward(const Tensor& x);
/// dx = dy * elu'(x), overwriting dx.
void elu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);
Tensor elu_backward(const Tensor& x, const Tensor& dy);

double sigmoid(double x);

// --- dropout ---------------------------------------------------------------

/// Inverted-dropout scale factors: 0 with probability `rate`, else 1/(1-rate).
std::vector<double> dropout_mask(std::size_t n, double rate, Rng& rng);

/// Identity when !training or rate == 0; otherwise applies a fresh mask drawn
/// from rng, returned through `mask` when provided.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training,
               std::vector<double>* mask = nullptr);

// --- weight normalization ---------------------------------------------------

/// w[u] = g[u] * v[u] / ||v[u]|| for v [U x ...] and g [U].
Tensor weight_norm_forward(const Tensor& v, const Tensor& g);
void weight_norm_backward(const Tensor& v, const Tensor& g, const Tensor& dw, Tensor& dv,
                          Tensor& dg);

// --- loss ------------------------------------------------------------------

/// Mean absolute error.
double l1_loss(std::span<const double> pred, std::span<const double> target);
/// sign(pred - target) / T, with 0 at exact ties.
std::vector<double> l1_backward(std::span<const double> pred, std::span<const double> target);

}  // namespace choreoseg::nn
