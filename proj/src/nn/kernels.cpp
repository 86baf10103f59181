#include "choreoseg/nn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace choreoseg::nn {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// --- dense -----------------------------------------------------------------

void dense_forward(std::span<const double> x, const Tensor& W, const Tensor& b,
                   std::span<double> y) {
  const std::size_t out = W.dim(0);
  const std::size_t in = W.dim(1);
  const double* w = W.data().data();
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b[o];
    const double* wr = w + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
}

Tensor dense_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
  if (W.rank() != 2 || b.rank() != 1 || b.dim(0) != W.dim(0)) {
    throw ShapeError("dense: weights " + shape_string(W.shape()) + " and bias " +
                     shape_string(b.shape()) + " disagree");
  }
  const std::size_t in = W.dim(1);
  const std::size_t out = W.dim(0);
  if (x.rank() == 1) {
    if (x.dim(0) != in) throw ShapeError("dense: input length does not match weights");
    Tensor y({out});
    dense_forward(x.data(), W, b, y.data());
    return y;
  }
  if (x.rank() != 2 || x.dim(1) != in) {
    throw ShapeError("dense: input " + shape_string(x.shape()) + " does not match weights " +
                     shape_string(W.shape()));
  }
  Tensor y({x.dim(0), out});
  for (std::size_t r = 0; r < x.dim(0); ++r) dense_forward(x.row(r), W, b, y.row(r));
  return y;
}

void dense_backward(std::span<const double> x, const Tensor& W, std::span<const double> dy,
                    std::span<double> dx, Tensor& dW, Tensor& db) {
  const std::size_t out = W.dim(0);
  const std::size_t in = W.dim(1);
  const double* w = W.data().data();
  double* dw = dW.data().data();
  for (std::size_t o = 0; o < out; ++o) {
    const double g = dy[o];
    db[o] += g;
    if (g == 0.0) continue;
    double* dwr = dw + o * in;
    for (std::size_t i = 0; i < in; ++i) dwr[i] += g * x[i];
    if (!dx.empty()) {
      const double* wr = w + o * in;
      for (std::size_t i = 0; i < in; ++i) dx[i] += g * wr[i];
    }
  }
}

Tensor dense_backward(const Tensor& x, const Tensor& W, const Tensor& dy, Tensor& dW,
                      Tensor& db) {
  require_shape(dW, W.shape(), "dense dW");
  Tensor dx(x.shape());
  if (x.rank() == 1) {
    dense_backward(x.data(), W, dy.data(), dx.data(), dW, db);
  } else {
    for (std::size_t r = 0; r < x.dim(0); ++r) dense_backward(x.row(r), W, dy.row(r), dx.row(r), dW, db);
  }
  return dx;
}

// --- dilated conv ----------------------------------------------------------

namespace {

void check_kernel(std::size_t k, std::size_t dilation) {
  if (k % 2 == 0) {
    throw ConfigError("non-causal dilated convolution needs an odd kernel size, got " +
                      std::to_string(k));
  }
  if (dilation == 0) throw ConfigError("dilation must be at least 1");
}

// Output range [lo, hi) of t for which t + offset lies inside [0, n).
inline void valid_range(std::ptrdiff_t n, std::ptrdiff_t offset, std::ptrdiff_t& lo,
                        std::ptrdiff_t& hi) {
  lo = std::max<std::ptrdiff_t>(0, -offset);
  hi = std::min<std::ptrdiff_t>(n, n - offset);
}

}  // namespace

void conv1d_dilated_forward(std::span<const double> x, std::span<const double> kernel,
                            std::size_t dilation, std::span<double> y) {
  check_kernel(kernel.size(), dilation);
  if (y.size() != x.size()) throw ShapeError("conv1d: output length must equal input length");
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto center = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t j = 0; j < kernel.size(); ++j) {
    const double k = kernel[j];
    if (k == 0.0) continue;
    const std::ptrdiff_t offset = (static_cast<std::ptrdiff_t>(j) - center) *
                                  static_cast<std::ptrdiff_t>(dilation);
    std::ptrdiff_t lo, hi;
    valid_range(n, offset, lo, hi);
    for (std::ptrdiff_t t = lo; t < hi; ++t) y[t] += k * x[t + offset];
  }
}

Tensor conv1d_dilated_forward(const Tensor& x, const Tensor& kernel, std::size_t dilation) {
  if (x.rank() != 1 || kernel.rank() != 1) throw ShapeError("conv1d: expects rank-1 tensors");
  Tensor y(x.shape());
  conv1d_dilated_forward(x.data(), kernel.data(), dilation, y.data());
  return y;
}

void conv1d_dilated_backward(std::span<const double> x, std::span<const double> kernel,
                             std::size_t dilation, std::span<const double> dy,
                             std::span<double> dx, std::span<double> dkernel) {
  check_kernel(kernel.size(), dilation);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto center = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  for (std::size_t j = 0; j < kernel.size(); ++j) {
    const std::ptrdiff_t offset = (static_cast<std::ptrdiff_t>(j) - center) *
                                  static_cast<std::ptrdiff_t>(dilation);
    std::ptrdiff_t lo, hi;
    valid_range(n, offset, lo, hi);
    double acc = 0.0;
    for (std::ptrdiff_t t = lo; t < hi; ++t) acc += dy[t] * x[t + offset];
    dkernel[j] += acc;
    if (!dx.empty()) {
      const double k = kernel[j];
      for (std::ptrdiff_t t = lo; t < hi; ++t) dx[t + offset] += k * dy[t];
    }
  }
}

// --- conv2d / pooling ------------------------------------------------------

void Conv2dGeometry::validate() const {
  if (kernel_h == 0 || kernel_w == 0 || kernel_h > height || kernel_w > width) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) +
                     " does not fit input " + std::to_string(height) + "x" + std::to_string(width));
  }
}

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> x, const Tensor& weights,
                    const Tensor& bias, std::span<double> y) {
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  const double* w = weights.data().data();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    double* yo = y.data() + o * oh_n * ow_n;
    std::fill(yo, yo + oh_n * ow_n, bias[o]);
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const double* xc = x.data() + c * g.height * g.width;
      for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
          const double wv = w[((o * g.in_channels + c) * g.kernel_h + kh) * g.kernel_w + kw];
          for (std::size_t oh = 0; oh < oh_n; ++oh) {
            double* yr = yo + oh * ow_n;
            const double* xr = xc + (oh + kh) * g.width + kw;
            for (std::size_t ow = 0; ow < ow_n; ++ow) yr[ow] += wv * xr[ow];
          }
        }
      }
    }
  }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  if (x.rank() != 3 || weights.rank() != 4 || weights.dim(1) != x.dim(0) ||
      bias.size() != weights.dim(0)) {
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + ", weights " +
                     shape_string(weights.shape()) + " and bias " + shape_string(bias.shape()) +
                     " disagree");
  }
  const Conv2dGeometry g{x.dim(0), x.dim(1), x.dim(2), weights.dim(0), weights.dim(2), weights.dim(3)};
  g.validate();
  Tensor y({g.out_channels, g.out_height(), g.out_width()});
  conv2d_forward(g, x.data(), weights, bias, y.data());
  return y;
}

void conv2d_backward(const Conv2dGeometry& g, std::span<const double> x, const Tensor& weights,
                     std::span<const double> dy, std::span<double> dx, Tensor& dweights,
                     Tensor& dbias) {
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  const double* w = weights.data().data();
  double* dw = dweights.data().data();
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    const double* dyo = dy.data() + o * oh_n * ow_n;
    double bsum = 0.0;
    for (std::size_t i = 0; i < oh_n * ow_n; ++i) bsum += dyo[i];
    dbias[o] += bsum;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const double* xc = x.data() + c * g.height * g.width;
      double* dxc = dx.empty() ? nullptr : dx.data() + c * g.height * g.width;
      for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
          const std::size_t widx = ((o * g.in_channels + c) * g.kernel_h + kh) * g.kernel_w + kw;
          const double wv = w[widx];
          double acc = 0.0;
          for (std::size_t oh = 0; oh < oh_n; ++oh) {
            const double* dyr = dyo + oh * ow_n;
            const double* xr = xc + (oh + kh) * g.width + kw;
            for (std::size_t ow = 0; ow < ow_n; ++ow) acc += dyr[ow] * xr[ow];
            if (dxc != nullptr) {
              double* dxr = dxc + (oh + kh) * g.width + kw;
              for (std::size_t ow = 0; ow < ow_n; ++ow) dxr[ow] += wv * dyr[ow];
            }
          }
          dw[widx] += acc;
        }
      }
    }
  }
}

void PoolGeometry::validate() const {
  if (window_h == 0 || window_w == 0 || window_h > height || window_w > width) {
    throw ShapeError("maxpool: window " + std::to_string(window_h) + "x" +
                     std::to_string(window_w) + " larger than input " + std::to_string(height) +
                     "x" + std::to_string(width));
  }
}

void maxpool2d_forward(const PoolGeometry& g, std::span<const double> x, std::span<double> y,
                       std::span<std::uint32_t> argmax) {
  const std::size_t oh_n = g.out_height();
  const std::size_t ow_n = g.out_width();
  std::size_t out = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      for (std::size_t ow = 0; ow < ow_n; ++ow, ++out) {
        std::size_t best = (c * g.height + oh * g.window_h) * g.width + ow * g.window_w;
        for (std::size_t i = 0; i < g.window_h; ++i) {
          for (std::size_t j = 0; j < g.window_w; ++j) {
            const std::size_t idx = (c * g.height + oh * g.window_h + i) * g.width +
                                    ow * g.window_w + j;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[out] = x[best];
        argmax[out] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

Tensor maxpool2d_forward(const Tensor& x, std::size_t window_h, std::size_t window_w,
                         std::vector<std::uint32_t>* argmax) {
  if (x.rank() != 3) throw ShapeError("maxpool: expects [C x H x W]");
  const PoolGeometry g{x.dim(0), x.dim(1), x.dim(2), window_h, window_w};
  g.validate();
  Tensor y({g.channels, g.out_height(), g.out_width()});
  std::vector<std::uint32_t> idx(y.size());
  maxpool2d_forward(g, x.data(), y.data(), idx);
  if (argmax != nullptr) *argmax = std::move(idx);
  return y;
}

void maxpool2d_backward(std::span<const double> dy, std::span<const std::uint32_t> argmax,
                        std::span<double> dx) {
  for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
}

// --- activations -----------------------------------------------------------

void elu_forward(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] >= 0.0 ? x[i] : kEluAlpha * std::expm1(x[i]);
  }
}

Tensor elu_forward(const Tensor& x) {
  Tensor y(x.shape());
  elu_forward(x.data(), y.data());
  return y;
}

void elu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] = x[i] >= 0.0 ? dy[i] : dy[i] * kEluAlpha * std::exp(x[i]);
  }
}

Tensor elu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape());
  elu_backward(x.data(), dy.data(), dx.data());
  return dx;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- dropout ---------------------------------------------------------------

std::vector<double> dropout_mask(std::size_t n, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(n);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training, std::vector<double>* mask) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) {
    if (mask != nullptr) mask->assign(x.size(), 1.0);
    return x;
  }
  std::vector<double> m = dropout_mask(x.size(), rate, rng);
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * m[i];
  if (mask != nullptr) *mask = std::move(m);
  return y;
}

// --- weight norm -----------------------------------------------------------

Tensor weight_norm_forward(const Tensor& v, const Tensor& g) {
  if (v.rank() < 1 || g.rank() != 1 || g.dim(0) != v.dim(0)) {
    throw ShapeError("weight_norm: v " + shape_string(v.shape()) + " and g " +
                     shape_string(g.shape()) + " disagree");
  }
  Tensor w(v.shape());
  const std::size_t units = v.dim(0);
  const std::size_t per = v.size() / units;
  for (std::size_t u = 0; u < units; ++u) {
    double sq = 0.0;
    for (std::size_t i = 0; i < per; ++i) sq += v[u * per + i] * v[u * per + i];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) {
      throw DegenerateParameterError("weight_norm: direction vector " + std::to_string(u) +
                                     " has zero norm");
    }
    const double scale = g[u] / norm;
    for (std::size_t i = 0; i < per; ++i) w[u * per + i] = scale * v[u * per + i];
  }
  return w;
}

void weight_norm_backward(const Tensor& v, const Tensor& g, const Tensor& dw, Tensor& dv,
                          Tensor& dg) {
  const std::size_t units = v.dim(0);
  const std::size_t per = v.size() / units;
  for (std::size_t u = 0; u < units; ++u) {
    double sq = 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      sq += v[u * per + i] * v[u * per + i];
      dot += dw[u * per + i] * v[u * per + i];
    }
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0)) {
      throw DegenerateParameterError("weight_norm: direction vector " + std::to_string(u) +
                                     " has zero norm");
    }
    // dg = dw . v/|v|;  dv = g/|v| * (dw - (dw . v) v / |v|^2)
    dg[u] += dot / norm;
    const double scale = g[u] / norm;
    const double proj = dot / sq;
    for (std::size_t i = 0; i < per; ++i) {
      dv[u * per + i] += scale * (dw[u * per + i] - proj * v[u * per + i]);
    }
  }
}

// --- loss ------------------------------------------------------------------

double l1_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw ShapeError("l1_loss: prediction length " + std::to_string(pred.size()) +
                     " differs from target length " + std::to_string(target.size()));
  }
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - target[i]);
  return acc / static_cast<double>(pred.size());
}

std::vector<double> l1_backward(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw ShapeError("l1_backward: length mismatch");
  std::vector<double> grad(pred.size(), 0.0);
  const double inv = pred.empty() ? 0.0 : 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    grad[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  return grad;
}

}  // namespace choreoseg::nn
