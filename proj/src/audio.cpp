#include "choreoseg/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>

#include "choreoseg/binary_io.hpp"
#include "choreoseg/error.hpp"

namespace choreoseg::audio {

namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE);
    if (plan_ == nullptr) throw ConfigError("FFTW could not plan a transform of size " +
                                            std::to_string(n));
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
  }

  std::span<double> input() { return {in_.get(), n_}; }

  /// |X_k|^2 for k = 0..n/2.
  void power(std::span<double> out) {
    fftw_execute(plan_);
    for (std::size_t k = 0; k < n_ / 2 + 1; ++k) {
      out[k] = out_.get()[k][0] * out_.get()[k][0] + out_.get()[k][1] * out_.get()[k][1];
    }
  }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_ = nullptr;
};

constexpr double kPowerFloor = 1e-10;

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

void SpectrogramConfig::validate(double sample_rate) const {
  if (!(sample_rate > 0.0)) throw ConfigError("sample rate must be positive");
  if (fft_size < 2 || hop == 0 || bands == 0) {
    throw ConfigError("spectrogram needs fft_size >= 2, hop >= 1 and at least one band");
  }
  if (!(f_min >= 0.0 && f_min < f_max)) throw ConfigError("Mel range needs 0 <= f_min < f_max");
  if (sample_rate < 2.0 * f_max) {
    throw ConfigError("sample rate " + std::to_string(sample_rate) +
                      " Hz is below twice the top Mel frequency " + std::to_string(f_max) + " Hz");
  }
}

MelFilterbank::MelFilterbank(const SpectrogramConfig& cfg, double sample_rate)
    : bands_(cfg.bands), bins_(cfg.fft_size / 2 + 1) {
  cfg.validate(sample_rate);
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(cfg.f_max);
  edges_hz_.resize(bands_ + 2);
  for (std::size_t i = 0; i < bands_ + 2; ++i) {
    edges_hz_[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                          static_cast<double>(bands_ + 1));
  }
  weights_.assign(bands_ * bins_, 0.0);
  const double bin_hz = sample_rate / static_cast<double>(cfg.fft_size);
  for (std::size_t k = 0; k < bands_; ++k) {
    const double lo = edges_hz_[k];
    const double mid = edges_hz_[k + 1];
    const double hi = edges_hz_[k + 2];
    for (std::size_t b = 0; b < bins_; ++b) {
      const double f = static_cast<double>(b) * bin_hz;
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      weights_[k * bins_ + b] = std::max(0.0, std::min(rise, fall));
    }
  }
}

MelSpectrogram mel_spectrogram(const Waveform& w, const SpectrogramConfig& cfg) {
  if (w.samples.empty()) throw ConfigError("cannot compute a spectrogram of an empty waveform");
  const MelFilterbank bank(cfg, w.sample_rate);

  const std::size_t n = cfg.fft_size;
  const std::size_t half = n / 2;
  const std::size_t frames = 1 + w.samples.size() / cfg.hop;

  std::vector<double> window(n);
  for (std::size_t i = 0; i < n; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                     static_cast<double>(n));
  }

  RealFft fft(n);
  std::vector<double> power(bank.bins());
  MelSpectrogram out;
  out.frames = frames;
  out.bands = cfg.bands;
  out.frame_rate = w.sample_rate / static_cast<double>(cfg.hop);
  out.scale = SpectrogramScale::Decibels;
  out.values.assign(frames * cfg.bands, 0.0);

  const auto total = static_cast<std::ptrdiff_t>(w.samples.size());
  double peak = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    auto buf = fft.input();
    const auto start = static_cast<std::ptrdiff_t>(t * cfg.hop) - static_cast<std::ptrdiff_t>(half);
    for (std::size_t i = 0; i < n; ++i) {
      const std::ptrdiff_t s = start + static_cast<std::ptrdiff_t>(i);
      buf[i] = (s >= 0 && s < total) ? w.samples[static_cast<std::size_t>(s)] * window[i] : 0.0;
    }
    fft.power(power);
    for (std::size_t k = 0; k < cfg.bands; ++k) {
      const auto row = bank.row(k);
      double acc = 0.0;
      for (std::size_t b = 0; b < power.size(); ++b) acc += row[b] * power[b];
      out.values[t * cfg.bands + k] = acc;
      peak = std::max(peak, acc);
    }
  }

  if (peak < kPowerFloor) {
    std::fill(out.values.begin(), out.values.end(), kFloorDb);
    return out;
  }
  const double ref_db = 10.0 * std::log10(peak);
  for (double& v : out.values) {
    const double db = 10.0 * std::log10(std::max(v, kPowerFloor)) - ref_db;
    v = std::clamp(db, kFloorDb, 0.0);
  }
  return out;
}

MelSpectrogram normalize_spectrogram(const MelSpectrogram& s) {
  if (s.scale == SpectrogramScale::Normalized) return s;
  MelSpectrogram out = s;
  out.scale = SpectrogramScale::Normalized;
  for (double& v : out.values) v = (v + 40.0) / 80.0;
  return out;
}

MelSpectrogram denormalize_spectrogram(const MelSpectrogram& s) {
  if (s.scale == SpectrogramScale::Decibels) return s;
  MelSpectrogram out = s;
  out.scale = SpectrogramScale::Decibels;
  for (double& v : out.values) v = v * 80.0 - 40.0;
  return out;
}

std::size_t nearest_spectrogram_frame(const MelSpectrogram& s, std::size_t t, double fps) {
  if (!(fps > 0.0)) throw ConfigError("video frame rate must be positive");
  return static_cast<std::size_t>(std::llround(static_cast<double>(t) * s.frame_rate / fps));
}

void frame_slice(const MelSpectrogram& s, std::size_t t, double fps, std::span<double> out) {
  if (s.frames == 0) throw ShapeError("empty spectrogram");
  if (out.size() != kSliceRows * s.bands) throw ShapeError("slice buffer must hold 5 x bands");
  const auto center = static_cast<std::ptrdiff_t>(nearest_spectrogram_frame(s, t, fps));
  const auto last = static_cast<std::ptrdiff_t>(s.frames) - 1;
  for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(kSliceRows); ++r) {
    const auto src = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(center + r - 2, 0, last));
    const auto row = s.row(src);
    std::copy(row.begin(), row.end(), out.begin() + r * static_cast<std::ptrdiff_t>(s.bands));
  }
}

std::vector<double> frame_slice(const MelSpectrogram& s, std::size_t t, double fps) {
  std::vector<double> out(kSliceRows * s.bands);
  frame_slice(s, t, fps, out);
  return out;
}

double detect_onset(const Waveform& w) {
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    if (std::abs(w.samples[i]) > kOnsetAmplitude) return static_cast<double>(i) / w.sample_rate;
  }
  throw OnsetNotFoundError("no audio sample exceeds amplitude 0.5");
}

// --- WAV -------------------------------------------------------------------

Waveform read_wav(std::istream& in) {
  if (binary::read_string(in, 4, "WAV header") != "RIFF") throw ParseError("not a RIFF file");
  binary::read_u32(in, "WAV header");
  if (binary::read_string(in, 4, "WAV header") != "WAVE") throw ParseError("not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    const std::string id = binary::read_string(in, 4, "WAV chunk header");
    const std::uint32_t size = binary::read_u32(in, "WAV chunk header");
    if (id == "fmt ") {
      if (size < 16) throw ParseError("WAV fmt chunk too short");
      format = binary::read_u16(in, "WAV fmt");
      channels = binary::read_u16(in, "WAV fmt");
      rate = binary::read_u32(in, "WAV fmt");
      binary::read_u32(in, "WAV fmt");  // byte rate
      binary::read_u16(in, "WAV fmt");  // block align
      bits = binary::read_u16(in, "WAV fmt");
      std::uint32_t consumed = 16;
      if (format == 0xFFFE && size >= 26) {
        binary::read_u16(in, "WAV fmt");  // cbSize
        binary::read_u16(in, "WAV fmt");  // valid bits
        binary::read_u32(in, "WAV fmt");  // channel mask
        format = binary::read_u16(in, "WAV fmt");  // sub-format GUID prefix
        consumed = 26;
      }
      in.ignore(size - consumed + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ParseError("WAV data chunk before fmt chunk");
      if (channels == 0 || rate == 0) throw ParseError("WAV declares zero channels or rate");
      const bool pcm16 = format == 1 && bits == 16;
      const bool f32 = format == 3 && bits == 32;
      if (!pcm16 && !f32) {
        throw ParseError("unsupported WAV encoding (need 16-bit PCM or 32-bit float)");
      }
      const std::size_t bytes_per = bits / 8;
      const std::size_t frames = size / (bytes_per * channels);
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(frames);
      for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
          if (pcm16) {
            acc += static_cast<std::int16_t>(binary::read_u16(in, "WAV samples")) / 32768.0;
          } else {
            acc += binary::read_f32(in, "WAV samples");
          }
        }
        const double v = acc / channels;
        if (!std::isfinite(v)) throw ParseError("WAV contains non-finite samples");
        w.samples[f] = v;
      }
      return w;
    } else {
      in.ignore(size + (size & 1));
      if (!in) throw ParseError("truncated WAV chunk '" + id + "'");
    }
  }
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open WAV file " + path.string());
  return read_wav(in);
}

void write_wav(std::ostream& out, const Waveform& w) {
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  binary::write_bytes(out, "RIFF");
  binary::write_u32(out, 36 + data_bytes);
  binary::write_bytes(out, "WAVEfmt ");
  binary::write_u32(out, 16);
  binary::write_u16(out, 1);
  binary::write_u16(out, 1);
  binary::write_u32(out, rate);
  binary::write_u32(out, rate * 2);
  binary::write_u16(out, 2);
  binary::write_u16(out, 16);
  binary::write_bytes(out, "data");
  binary::write_u32(out, data_bytes);
  for (double s : w.samples) {
    const long q = std::lround(std::clamp(s, -1.0, 1.0) * 32767.0);
    binary::write_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write WAV file " + path.string());
  write_wav(out, w);
}

// --- spectrogram cache -----------------------------------------------------

void write_spectrogram(std::ostream& out, const MelSpectrogram& s) {
  const MelSpectrogram norm = normalize_spectrogram(s);
  binary::write_bytes(out, "DSPC");
  binary::write_u32(out, static_cast<std::uint32_t>(norm.frames));
  binary::write_u32(out, static_cast<std::uint32_t>(norm.bands));
  binary::write_f32(out, static_cast<float>(norm.frame_rate));
  for (double v : norm.values) binary::write_f32(out, static_cast<float>(v));
}

void write_spectrogram(const std::filesystem::path& path, const MelSpectrogram& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write spectrogram cache " + path.string());
  write_spectrogram(out, s);
}

MelSpectrogram read_spectrogram(std::istream& in) {
  if (binary::read_string(in, 4, "spectrogram header") != "DSPC") {
    throw ParseError("spectrogram cache has wrong magic");
  }
  MelSpectrogram s;
  s.scale = SpectrogramScale::Normalized;
  s.frames = binary::read_u32(in, "spectrogram header");
  s.bands = binary::read_u32(in, "spectrogram header");
  s.frame_rate = binary::read_f32(in, "spectrogram header");
  if (s.bands != kMelBands) throw ParseError("spectrogram cache must have 81 bands");
  if (!(s.frame_rate > 0.0)) throw ParseError("spectrogram cache has non-positive frame rate");
  s.values.resize(s.frames * s.bands);
  for (double& v : s.values) v = binary::read_f32(in, "spectrogram values");
  return s;
}

MelSpectrogram read_spectrogram(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open spectrogram cache " + path.string());
  return read_spectrogram(in);
}

}  // namespace choreoseg::audio
