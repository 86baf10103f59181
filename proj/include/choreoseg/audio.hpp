#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace choreoseg::audio {

inline constexpr std::size_t kMelBands = 81;
inline constexpr std::size_t kSliceRows = 5;
inline constexpr std::size_t kSliceSize = kSliceRows * kMelBands;
inline constexpr double kFloorDb = -80.0;
/// Absolute amplitude that marks the music onset.
inline constexpr double kOnsetAmplitude = 0.5;

/// Mono samples in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  double sample_rate = 44100.0;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// STFT and Mel-band layout. Defaults follow the usual beat-tracking front end:
/// 2048-sample Hann window, hop of 441 samples (100 frames/s at 44.1 kHz),
/// 81 triangular bands between 30 Hz and 17 kHz.
struct SpectrogramConfig {
  std::size_t fft_size = 2048;
  std::size_t hop = 441;
  std::size_t bands = kMelBands;
  double f_min = 30.0;
  double f_max = 17000.0;

  /// Throws ConfigError when the layout cannot be realized at `sample_rate`.
  void validate(double sample_rate) const;
};

enum class SpectrogramScale { Decibels, Normalized };

/// Row-major frames x bands array.
struct MelSpectrogram {
  std::size_t frames = 0;
  std::size_t bands = kMelBands;
  double frame_rate = 100.0;
  SpectrogramScale scale = SpectrogramScale::Decibels;
  std::vector<double> values;

  double at(std::size_t t, std::size_t band) const { return values[t * bands + band]; }
  std::span<const double> row(std::size_t t) const { return {values.data() + t * bands, bands}; }
};

/// Triangular Mel filterbank over the rfft bins, bands x (fft_size/2 + 1).
class MelFilterbank {
 public:
  MelFilterbank(const SpectrogramConfig& cfg, double sample_rate);

  std::size_t bands() const { return bands_; }
  std::size_t bins() const { return bins_; }
  /// Center frequency of band k in Hz.
  double center_hz(std::size_t band) const { return edges_hz_[band + 1]; }
  double weight(std::size_t band, std::size_t bin) const { return weights_[band * bins_ + bin]; }
  std::span<const double> row(std::size_t band) const {
    return {weights_.data() + band * bins_, bins_};
  }

 private:
  std::size_t bands_;
  std::size_t bins_;
  std::vector<double> edges_hz_;
  std::vector<double> weights_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Magnitude STFT -> Mel bands -> power in dB relative to the per-file
/// maximum, clipped to [-80, 0]. Frames are centered at multiples of the hop.
/// A silent input yields -80 dB everywhere.
MelSpectrogram mel_spectrogram(const Waveform& w, const SpectrogramConfig& cfg = {});

/// (v + 40) / 80: maps [-80, 0] dB onto [-0.5, 0.5].
MelSpectrogram normalize_spectrogram(const MelSpectrogram& s);
MelSpectrogram denormalize_spectrogram(const MelSpectrogram& s);

/// Index of the spectrogram frame nearest in time to video frame t.
std::size_t nearest_spectrogram_frame(const MelSpectrogram& s, std::size_t t, double fps);

/// Rows i-2..i+2 around the nearest spectrogram frame, edge rows replicated.
/// `out` must hold 5 x bands values.
void frame_slice(const MelSpectrogram& s, std::size_t t, double fps, std::span<double> out);
std::vector<double> frame_slice(const MelSpectrogram& s, std::size_t t, double fps);

/// Time (s) of the first sample with |amplitude| > 0.5; OnsetNotFoundError if none.
double detect_onset(const Waveform& w);

// --- I/O -------------------------------------------------------------------

/// Reads RIFF/WAVE with 16-bit PCM or 32-bit float samples; stereo is
/// downmixed by channel mean.
Waveform read_wav(std::istream& in);
Waveform read_wav(const std::filesystem::path& path);
/// Writes 16-bit PCM mono.
void write_wav(std::ostream& out, const Waveform& w);
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// Cache layout: "DSPC", u32 frames, u32 bands, f32 frame_rate, then
/// frames x bands little-endian f32 values (normalized scale).
void write_spectrogram(std::ostream& out, const MelSpectrogram& s);
void write_spectrogram(const std::filesystem::path& path, const MelSpectrogram& s);
MelSpectrogram read_spectrogram(std::istream& in);
MelSpectrogram read_spectrogram(const std::filesystem::path& path);

}  // namespace choreoseg::audio
