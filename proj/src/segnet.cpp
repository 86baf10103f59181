#include "choreoseg/segnet.hpp"

#include <algorithm>
#include <cmath>

#include "choreoseg/error.hpp"
#include "choreoseg/nn/kernels.hpp"
#include "choreoseg/skeleton.hpp"

namespace choreoseg::segnet {

using nn::Conv2dGeometry;
using nn::PoolGeometry;
using nn::Tensor;

namespace {

// Parameter slots, in registration order.
constexpr std::size_t kVisualW = 0, kVisualB = 1;
constexpr std::size_t kConv1W = 2, kConv1B = 3, kConv2W = 4, kConv2B = 5, kConv3W = 6,
                      kConv3B = 7;
constexpr std::size_t kTcnBase = 8;
constexpr std::size_t kSlotV = 0, kSlotG = 1, kSlotBias = 2;

constexpr std::size_t kAudioHidden = 16;
constexpr std::size_t kPoolWidth = 3;

struct AudioGeometry {
  Conv2dGeometry conv1, conv2, conv3;
  PoolGeometry pool1, pool2;
};

AudioGeometry audio_geometry(std::size_t audio_out) {
  AudioGeometry g{};
  g.conv1 = {1, audio::kSliceRows, audio::kMelBands, kAudioHidden, 3, 3};
  g.pool1 = {kAudioHidden, g.conv1.out_height(), g.conv1.out_width(), 1, kPoolWidth};
  g.conv2 = {kAudioHidden, g.pool1.out_height(), g.pool1.out_width(), kAudioHidden, 3, 3};
  g.pool2 = {kAudioHidden, g.conv2.out_height(), g.conv2.out_width(), 1, kPoolWidth};
  g.conv3 = {kAudioHidden, g.pool2.out_height(), g.pool2.out_width(), audio_out,
             g.pool2.out_height(), g.pool2.out_width()};
  return g;
}

double elu_grad(double pre) { return pre >= 0.0 ? 1.0 : nn::kEluAlpha * std::exp(pre); }

/// ELU followed by inverted dropout; keep flags drawn from rng when training.
void elu_dropout(std::span<const double> pre, std::span<double> out, std::span<std::uint8_t> keep,
                 double rate, bool training, Rng* rng) {
  nn::elu_forward(pre, out);
  if (!training || rate == 0.0) {
    if (!keep.empty()) std::fill(keep.begin(), keep.end(), std::uint8_t{1});
    return;
  }
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const bool kept = rng->uniform() >= rate;
    if (!keep.empty()) keep[i] = kept ? 1 : 0;
    out[i] = kept ? out[i] * scale : 0.0;
  }
}

/// d(pre) from d(out) through ELU + dropout, overwriting dpre.
void elu_dropout_backward(std::span<const double> pre, std::span<const std::uint8_t> keep,
                          double rate, bool training, std::span<const double> dout,
                          std::span<double> dpre) {
  const double scale = (training && rate > 0.0) ? 1.0 / (1.0 - rate) : 1.0;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const double k = keep.empty() ? 1.0 : (keep[i] ? scale : 0.0);
    dpre[i] = dout[i] * k * elu_grad(pre[i]);
  }
}

void uniform_fill(Tensor& t, double bound, Rng& rng) {
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

}  // namespace

// --- config ----------------------------------------------------------------

std::size_t ModelConfig::receptive_radius() const {
  return (kernel - 1) * ((std::size_t{1} << layers) - 1);
}

void ModelConfig::validate() const {
  if (layers == 0 || layers > 20) throw ConfigError("layers must lie in [1, 20]");
  if (kernel % 2 == 0) {
    throw ConfigError("TCN kernel size must be odd for a centered non-causal window, got " +
                      std::to_string(kernel));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (visual_out == 0 || audio_out == 0) throw ConfigError("feature widths must be positive");
  if (channels != visual_out + audio_out) {
    throw ConfigError("channels (" + std::to_string(channels) + ") must equal visual_out + audio_out (" +
                      std::to_string(visual_out + audio_out) + ")");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"layers", layers},         {"kernel", kernel},         {"dropout", dropout},
          {"channels", channels},     {"visual_out", visual_out}, {"audio_out", audio_out},
          {"shared_tcn_kernels", shared_tcn_kernels}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.kernel = j.value("kernel", c.kernel);
    c.dropout = j.value("dropout", c.dropout);
    c.visual_out = j.value("visual_out", c.visual_out);
    c.audio_out = j.value("audio_out", c.audio_out);
    c.channels = j.value("channels", c.visual_out + c.audio_out);
    c.shared_tcn_kernels = j.value("shared_tcn_kernels", c.shared_tcn_kernels);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

NetworkInput make_input(std::span<const double> bone_features, const audio::MelSpectrogram& spec,
                        double fps) {
  if (bone_features.size() % skeleton::kBoneFeatures != 0) {
    throw ShapeError("bone features must hold 134 values per frame");
  }
  if (spec.scale != audio::SpectrogramScale::Normalized) {
    throw ConfigError("network input needs a normalized spectrogram");
  }
  NetworkInput in;
  in.frames = bone_features.size() / skeleton::kBoneFeatures;
  in.bones = Tensor({in.frames, skeleton::kBoneFeatures},
                    std::vector<double>(bone_features.begin(), bone_features.end()));
  in.slices = Tensor({in.frames, audio::kSliceSize});
  for (std::size_t t = 0; t < in.frames; ++t) audio::frame_slice(spec, t, fps, in.slices.row(t));
  return in;
}

// --- construction ----------------------------------------------------------

SegNet::SegNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto geo = audio_geometry(config_.audio_out);
  auto add = [this](std::string name, nn::Shape shape) {
    params_.emplace_back(std::move(name), Tensor(std::move(shape)));
    return params_.size() - 1;
  };
  add("visual/weight", {config_.visual_out, skeleton::kBoneFeatures});
  add("visual/bias", {config_.visual_out});
  add("audio/conv1/weight", {kAudioHidden, 1, geo.conv1.kernel_h, geo.conv1.kernel_w});
  add("audio/conv1/bias", {kAudioHidden});
  add("audio/conv2/weight", {kAudioHidden, kAudioHidden, geo.conv2.kernel_h, geo.conv2.kernel_w});
  add("audio/conv2/bias", {kAudioHidden});
  add("audio/conv3/weight", {config_.audio_out, kAudioHidden, geo.conv3.kernel_h, geo.conv3.kernel_w});
  add("audio/conv3/bias", {config_.audio_out});
  const std::size_t rows = config_.shared_tcn_kernels ? 1 : config_.channels;
  for (std::size_t b = 0; b < config_.layers; ++b) {
    for (std::size_t c = 1; c <= 2; ++c) {
      const std::string prefix = "tcn/block" + std::to_string(b) + "/conv" + std::to_string(c);
      add(prefix + "/v", {rows, config_.kernel});
      add(prefix + "/g", {rows});
      add(prefix + "/bias", {rows});
    }
  }
  add("head/weight", {1, config_.channels});
  add("head/bias", {1});

  uniform_fill(params_[kVisualW].value, 1.0 / std::sqrt(double(skeleton::kBoneFeatures)), rng);
  uniform_fill(params_[kConv1W].value, 1.0 / std::sqrt(double(geo.conv1.kernel_h * geo.conv1.kernel_w)), rng);
  uniform_fill(params_[kConv2W].value,
               1.0 / std::sqrt(double(kAudioHidden * geo.conv2.kernel_h * geo.conv2.kernel_w)), rng);
  uniform_fill(params_[kConv3W].value,
               1.0 / std::sqrt(double(kAudioHidden * geo.conv3.kernel_h * geo.conv3.kernel_w)), rng);
  for (std::size_t b = 0; b < config_.layers; ++b) {
    for (std::size_t c = 0; c < 2; ++c) {
      Tensor& v = params_[tcn_param(b, c, kSlotV)].value;
      Tensor& g = params_[tcn_param(b, c, kSlotG)].value;
      uniform_fill(v, 1.0 / std::sqrt(double(config_.kernel)), rng);
      for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (double x : v.row(r)) sq += x * x;
        g[r] = std::sqrt(sq);
      }
    }
  }
  uniform_fill(params_[params_.size() - 2].value, 1.0 / std::sqrt(double(config_.channels)), rng);
}

std::size_t SegNet::tcn_param(std::size_t block, std::size_t conv, std::size_t which) const {
  return kTcnBase + (block * 2 + conv) * 3 + which;
}

nn::ParamTensor& SegNet::param(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named " + std::string(name));
}

const nn::ParamTensor& SegNet::param(std::string_view name) const {
  return const_cast<SegNet*>(this)->param(name);
}

void SegNet::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

SegNet SegNet::from_checkpoint(const nn::Checkpoint& ckpt) {
  const auto it = ckpt.metadata.find("config");
  if (it == ckpt.metadata.end()) throw ParseError("checkpoint carries no model config");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(it->second);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint config: ") + e.what());
  }
  SegNet net(ModelConfig::from_json(cfg), 0);
  for (auto& p : net.params_) {
    const Tensor* t = ckpt.find(p.name);
    if (t == nullptr) throw ParseError("checkpoint lacks parameter " + p.name);
    if (t->shape() != p.value.shape()) {
      throw ParseError("checkpoint parameter " + p.name + " has shape " +
                       nn::shape_string(t->shape()) + ", expected " +
                       nn::shape_string(p.value.shape()));
    }
    p.value = *t;
  }
  return net;
}

nn::Checkpoint SegNet::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.metadata["config"] = config_.to_json().dump();
  for (const auto& p : params_) ckpt.tensors.emplace_back(p.name, p.value);
  return ckpt;
}

std::vector<nn::Shape> SegNet::audio_shape_trace() {
  const auto g = audio_geometry(kAudioHidden);
  return {{g.pool1.channels, g.pool1.out_height(), g.pool1.out_width()},
          {g.pool2.channels, g.pool2.out_height(), g.pool2.out_width()},
          {g.conv3.out_channels, g.conv3.out_height(), g.conv3.out_width()}};
}

// --- stages ----------------------------------------------------------------

Tensor SegNet::visual_head(const Tensor& bones) const {
  nn::require_shape(bones, {bones.dim(0), skeleton::kBoneFeatures}, "visual head input");
  Tensor pre = nn::dense_forward(bones, params_[kVisualW].value, params_[kVisualB].value);
  return nn::elu_forward(pre);
}

void SegNet::audio_frame(std::span<const double> slice, std::span<double> out, ForwardTrace* trace,
                         std::size_t frame, bool training, Rng* rng) const {
  const auto g = audio_geometry(config_.audio_out);
  const std::size_t n1 = g.conv1.out_size(), m1 = g.pool1.out_size();
  const std::size_t n2 = g.conv2.out_size(), m2 = g.pool2.out_size();
  const std::size_t n3 = g.conv3.out_size();

  thread_local std::vector<double> local_c1, local_p1, local_c2, local_p2, local_c3, act;
  thread_local std::vector<std::uint32_t> local_i1, local_i2;
  std::span<double> c1, p1, c2, p2, c3;
  std::span<std::uint32_t> i1, i2;
  std::span<std::uint8_t> k1, k2, k3;
  if (trace != nullptr) {
    c1 = std::span(trace->conv1_pre).subspan(frame * n1, n1);
    p1 = std::span(trace->pool1_out).subspan(frame * m1, m1);
    c2 = std::span(trace->conv2_pre).subspan(frame * n2, n2);
    p2 = std::span(trace->pool2_out).subspan(frame * m2, m2);
    c3 = std::span(trace->conv3_pre).subspan(frame * n3, n3);
    i1 = std::span(trace->pool1_idx).subspan(frame * m1, m1);
    i2 = std::span(trace->pool2_idx).subspan(frame * m2, m2);
    k1 = std::span(trace->keep1).subspan(frame * n1, n1);
    k2 = std::span(trace->keep2).subspan(frame * n2, n2);
    k3 = std::span(trace->keep3).subspan(frame * n3, n3);
  } else {
    local_c1.resize(n1), local_p1.resize(m1), local_c2.resize(n2), local_p2.resize(m2);
    local_c3.resize(n3), local_i1.resize(m1), local_i2.resize(m2);
    c1 = local_c1, p1 = local_p1, c2 = local_c2, p2 = local_p2, c3 = local_c3;
    i1 = local_i1, i2 = local_i2;
  }
  act.resize(n1);
  const double rate = config_.dropout;

  nn::conv2d_forward(g.conv1, slice, params_[kConv1W].value, params_[kConv1B].value, c1);
  elu_dropout(c1, std::span(act).first(n1), k1, rate, training, rng);
  nn::maxpool2d_forward(g.pool1, std::span(act).first(n1), p1, i1);

  nn::conv2d_forward(g.conv2, p1, params_[kConv2W].value, params_[kConv2B].value, c2);
  elu_dropout(c2, std::span(act).first(n2), k2, rate, training, rng);
  nn::maxpool2d_forward(g.pool2, std::span(act).first(n2), p2, i2);

  nn::conv2d_forward(g.conv3, p2, params_[kConv3W].value, params_[kConv3B].value, c3);
  elu_dropout(c3, out, k3, rate, training, rng);
}

Tensor SegNet::audio_block(const Tensor& slices, bool training, Rng* rng) const {
  nn::require_shape(slices, {slices.dim(0), audio::kSliceSize}, "audio block input");
  if (training && config_.dropout > 0.0 && rng == nullptr) {
    throw ConfigError("training-mode audio block needs a random generator");
  }
  Tensor out({slices.dim(0), config_.audio_out});
  for (std::size_t t = 0; t < slices.dim(0); ++t) {
    audio_frame(slices.row(t), out.row(t), nullptr, t, training, rng);
  }
  return out;
}

Tensor SegNet::assemble_input(const Tensor& visual, const Tensor& audio) {
  if (visual.rank() != 2 || audio.rank() != 2 || visual.dim(0) != audio.dim(0)) {
    throw ShapeError("assemble_input: visual " + nn::shape_string(visual.shape()) + " and audio " +
                     nn::shape_string(audio.shape()) + " differ in frame count");
  }
  const std::size_t frames = visual.dim(0);
  const std::size_t nv = visual.dim(1);
  const std::size_t na = audio.dim(1);
  Tensor x({nv + na, frames});
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t r = 0; r < nv; ++r) x(r, t) = visual(t, r);
    for (std::size_t r = 0; r < na; ++r) x(nv + r, t) = audio(t, r);
  }
  return x;
}

Tensor SegNet::run_tcn(const Tensor& x, bool training, Rng* rng, ForwardTrace* trace) const {
  nn::require_shape(x, {config_.channels, x.dim(1)}, "TCN input");
  if (training && config_.dropout > 0.0 && rng == nullptr) {
    throw ConfigError("training-mode TCN needs a random generator");
  }
  const std::size_t channels = config_.channels;
  const std::size_t frames = x.dim(1);
  const bool shared = config_.shared_tcn_kernels;
  Tensor h = x;
  for (std::size_t b = 0; b < config_.layers; ++b) {
    const std::size_t dil = config_.dilation(b);
    Tensor w1 = nn::weight_norm_forward(params_[tcn_param(b, 0, kSlotV)].value,
                                        params_[tcn_param(b, 0, kSlotG)].value);
    Tensor w2 = nn::weight_norm_forward(params_[tcn_param(b, 1, kSlotV)].value,
                                        params_[tcn_param(b, 1, kSlotG)].value);
    const Tensor& b1 = params_[tcn_param(b, 0, kSlotBias)].value;
    const Tensor& b2 = params_[tcn_param(b, 1, kSlotBias)].value;

    Tensor pre1({channels, frames}), hidden({channels, frames});
    Tensor pre2({channels, frames}), out2({channels, frames});
    std::vector<std::uint8_t> keep1, keep2;
    if (trace != nullptr) {
      keep1.resize(channels * frames);
      keep2.resize(channels * frames);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t r = shared ? 0 : c;
      nn::conv1d_dilated_forward(h.row(c), w1.row(r), dil, pre1.row(c));
      for (double& v : pre1.row(c)) v += b1[r];
      elu_dropout(pre1.row(c), hidden.row(c),
                  keep1.empty() ? std::span<std::uint8_t>{}
                                : std::span(keep1).subspan(c * frames, frames),
                  config_.dropout, training, rng);
    }
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t r = shared ? 0 : c;
      nn::conv1d_dilated_forward(hidden.row(c), w2.row(r), dil, pre2.row(c));
      for (double& v : pre2.row(c)) v += b2[r];
      elu_dropout(pre2.row(c), out2.row(c),
                  keep2.empty() ? std::span<std::uint8_t>{}
                                : std::span(keep2).subspan(c * frames, frames),
                  config_.dropout, training, rng);
    }
    Tensor next = h;
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += out2[i];
    if (trace != nullptr) {
      trace->blocks.push_back({std::move(h), std::move(pre1), std::move(hidden), std::move(pre2),
                               std::move(w1), std::move(w2), std::move(keep1), std::move(keep2)});
    }
    h = std::move(next);
  }
  return h;
}

Tensor SegNet::tcn_forward(const Tensor& x, bool training, Rng* rng) const {
  return run_tcn(x, training, rng, nullptr);
}

std::vector<double> SegNet::probability_head(const Tensor& y) const {
  nn::require_shape(y, {config_.channels, y.dim(1)}, "probability head input");
  const Tensor& w = params_[params_.size() - 2].value;
  const double bias = params_.back().value[0];
  const std::size_t frames = y.dim(1);
  std::vector<double> logits(frames, bias);
  for (std::size_t c = 0; c < config_.channels; ++c) {
    const double wc = w[c];
    const auto row = y.row(c);
    for (std::size_t t = 0; t < frames; ++t) logits[t] += wc * row[t];
  }
  for (double& v : logits) v = nn::sigmoid(v);
  return logits;
}

std::vector<double> SegNet::predict_from_assembled(const Tensor& x) const {
  return probability_head(tcn_forward(x));
}

std::vector<double> SegNet::predict(const NetworkInput& input) const {
  return predict_from_assembled(assemble_input(visual_head(input.bones), audio_block(input.slices)));
}

// --- training pass ---------------------------------------------------------

ForwardTrace SegNet::forward(const NetworkInput& input, bool training, Rng* rng) const {
  if (training && config_.dropout > 0.0 && rng == nullptr) {
    throw ConfigError("training forward pass needs a random generator");
  }
  const std::size_t frames = input.frames;
  ForwardTrace trace;
  trace.frames = frames;
  trace.training = training;

  trace.visual_pre = nn::dense_forward(input.bones, params_[kVisualW].value, params_[kVisualB].value);
  Tensor visual = nn::elu_forward(trace.visual_pre);

  const auto g = audio_geometry(config_.audio_out);
  trace.conv1_pre.resize(frames * g.conv1.out_size());
  trace.keep1.resize(frames * g.conv1.out_size());
  trace.pool1_out.resize(frames * g.pool1.out_size());
  trace.pool1_idx.resize(frames * g.pool1.out_size());
  trace.conv2_pre.resize(frames * g.conv2.out_size());
  trace.keep2.resize(frames * g.conv2.out_size());
  trace.pool2_out.resize(frames * g.pool2.out_size());
  trace.pool2_idx.resize(frames * g.pool2.out_size());
  trace.conv3_pre.resize(frames * g.conv3.out_size());
  trace.keep3.resize(frames * g.conv3.out_size());
  Tensor audio({frames, config_.audio_out});
  for (std::size_t t = 0; t < frames; ++t) {
    audio_frame(input.slices.row(t), audio.row(t), &trace, t, training, rng);
  }

  trace.tcn_out = run_tcn(assemble_input(visual, audio), training, rng, &trace);
  trace.probability = probability_head(trace.tcn_out);
  return trace;
}

void SegNet::backward(const ForwardTrace& trace, const NetworkInput& input,
                      std::span<const double> dprob) {
  const std::size_t frames = trace.frames;
  if (dprob.size() != frames) throw ShapeError("backward: gradient length differs from frame count");
  const std::size_t channels = config_.channels;
  const bool shared = config_.shared_tcn_kernels;
  const bool training = trace.training;
  const double rate = config_.dropout;

  // Probability head.
  auto& head_w = params_[params_.size() - 2];
  auto& head_b = params_.back();
  std::vector<double> dlogit(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double p = trace.probability[t];
    dlogit[t] = dprob[t] * p * (1.0 - p);
    head_b.grad[0] += dlogit[t];
  }
  Tensor dh({channels, frames});
  for (std::size_t c = 0; c < channels; ++c) {
    const auto y = trace.tcn_out.row(c);
    auto d = dh.row(c);
    double acc = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      acc += dlogit[t] * y[t];
      d[t] = head_w.value[c] * dlogit[t];
    }
    head_w.grad[c] += acc;
  }

  // TCN, last block first.
  std::vector<double> dpre(frames), dhidden(frames);
  for (std::size_t bi = config_.layers; bi-- > 0;) {
    const auto& blk = trace.blocks[bi];
    const std::size_t dil = config_.dilation(bi);
    const std::size_t rows = shared ? 1 : channels;
    Tensor dw1({rows, config_.kernel}), dw2({rows, config_.kernel});
    auto& b1 = params_[tcn_param(bi, 0, kSlotBias)];
    auto& b2 = params_[tcn_param(bi, 1, kSlotBias)];
    Tensor dinput = dh;  // identity residual
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t r = shared ? 0 : c;
      const auto keep2 = blk.keep2.empty() ? std::span<const std::uint8_t>{}
                                           : std::span(blk.keep2).subspan(c * frames, frames);
      const auto keep1 = blk.keep1.empty() ? std::span<const std::uint8_t>{}
                                           : std::span(blk.keep1).subspan(c * frames, frames);
      elu_dropout_backward(blk.pre2.row(c), keep2, rate, training, dh.row(c), dpre);
      double bsum = 0.0;
      for (double v : dpre) bsum += v;
      b2.grad[r] += bsum;
      std::fill(dhidden.begin(), dhidden.end(), 0.0);
      nn::conv1d_dilated_backward(blk.hidden.row(c), blk.w2.row(r), dil, dpre, dhidden, dw2.row(r));

      elu_dropout_backward(blk.pre1.row(c), keep1, rate, training, dhidden, dpre);
      bsum = 0.0;
      for (double v : dpre) bsum += v;
      b1.grad[r] += bsum;
      nn::conv1d_dilated_backward(blk.input.row(c), blk.w1.row(r), dil, dpre, dinput.row(c), dw1.row(r));
    }
    nn::weight_norm_backward(params_[tcn_param(bi, 0, kSlotV)].value,
                             params_[tcn_param(bi, 0, kSlotG)].value, dw1,
                             params_[tcn_param(bi, 0, kSlotV)].grad,
                             params_[tcn_param(bi, 0, kSlotG)].grad);
    nn::weight_norm_backward(params_[tcn_param(bi, 1, kSlotV)].value,
                             params_[tcn_param(bi, 1, kSlotG)].value, dw2,
                             params_[tcn_param(bi, 1, kSlotV)].grad,
                             params_[tcn_param(bi, 1, kSlotG)].grad);
    dh = std::move(dinput);
  }

  // Visual head: rows [0, visual_out) of dX.
  const std::size_t nv = config_.visual_out;
  std::vector<double> dz(nv);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t r = 0; r < nv; ++r) dz[r] = dh(r, t) * elu_grad(trace.visual_pre(t, r));
    nn::dense_backward(input.bones.row(t), params_[kVisualW].value, dz, {},
                       params_[kVisualW].grad, params_[kVisualB].grad);
  }

  // Audio block, per frame.
  const auto g = audio_geometry(config_.audio_out);
  const std::size_t n1 = g.conv1.out_size(), m1 = g.pool1.out_size();
  const std::size_t n2 = g.conv2.out_size(), m2 = g.pool2.out_size();
  const std::size_t n3 = g.conv3.out_size();
  std::vector<double> da(n3), d3(n3), dp2(m2), da2(n2), d2(n2), dp1(m1), da1(n1), d1(n1);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t r = 0; r < n3; ++r) da[r] = dh(nv + r, t);
    elu_dropout_backward(std::span(trace.conv3_pre).subspan(t * n3, n3),
                         std::span(trace.keep3).subspan(t * n3, n3), rate, training, da, d3);
    std::fill(dp2.begin(), dp2.end(), 0.0);
    nn::conv2d_backward(g.conv3, std::span(trace.pool2_out).subspan(t * m2, m2),
                        params_[kConv3W].value, d3, dp2, params_[kConv3W].grad,
                        params_[kConv3B].grad);

    std::fill(da2.begin(), da2.end(), 0.0);
    nn::maxpool2d_backward(dp2, std::span(trace.pool2_idx).subspan(t * m2, m2), da2);
    elu_dropout_backward(std::span(trace.conv2_pre).subspan(t * n2, n2),
                         std::span(trace.keep2).subspan(t * n2, n2), rate, training, da2, d2);
    std::fill(dp1.begin(), dp1.end(), 0.0);
    nn::conv2d_backward(g.conv2, std::span(trace.pool1_out).subspan(t * m1, m1),
                        params_[kConv2W].value, d2, dp1, params_[kConv2W].grad,
                        params_[kConv2B].grad);

    std::fill(da1.begin(), da1.end(), 0.0);
    nn::maxpool2d_backward(dp1, std::span(trace.pool1_idx).subspan(t * m1, m1), da1);
    elu_dropout_backward(std::span(trace.conv1_pre).subspan(t * n1, n1),
                         std::span(trace.keep1).subspan(t * n1, n1), rate, training, da1, d1);
    nn::conv2d_backward(g.conv1, input.slices.row(t), params_[kConv1W].value, d1, {},
                        params_[kConv1W].grad, params_[kConv1B].grad);
  }
}

}  // namespace choreoseg::segnet
