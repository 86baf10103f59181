#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "choreoseg/audio.hpp"
#include "choreoseg/labels.hpp"
#include "choreoseg/pipeline/dataset.hpp"
#include "choreoseg/segnet.hpp"
#include "choreoseg/skeleton.hpp"

namespace choreoseg::pipeline {

/// Network-ready features of one video.
struct VideoFeatures {
  std::vector<double> bones;          // T x 134
  audio::MelSpectrogram spectrogram;  // normalized
  double fps = 0.0;

  std::size_t frames() const { return bones.size() / skeleton::kBoneFeatures; }
  segnet::NetworkInput to_input() const;
};

/// Dancer selection, interpolation, bone vectors, and the normalized Mel
/// spectrogram. `frames` = 0 takes the frame count from the detections.
VideoFeatures extract_features(const std::vector<skeleton::RawDetectionFrame>& detections,
                               const audio::Waveform& wave, double fps, std::size_t frames = 0,
                               const skeleton::SkeletonTopology& topo =
                                   skeleton::SkeletonTopology::halpe68(),
                               const audio::SpectrogramConfig& spec_cfg = {});

/// Bone cache: "DBON", u32 T, u32 134, f32 fps, T*134 little-endian f32.
void write_bones(const std::filesystem::path& path, const std::vector<double>& bones, double fps);
std::vector<double> read_bones(const std::filesystem::path& path, double* fps = nullptr);

void save_features(const VideoFeatures& f, const std::filesystem::path& bones_path,
                   const std::filesystem::path& spectrogram_path);
VideoFeatures load_features(const std::filesystem::path& bones_path,
                            const std::filesystem::path& spectrogram_path);

/// Computes features for every entry with keypoints and audio, writing
/// "<id>.bones" and "<id>.spec" into `out_dir` and updating the entry paths
/// and meta.total_frames.
void extract_index_features(DatasetIndex& index, const std::filesystem::path& out_dir);

/// A video ready for training or evaluation.
struct LoadedVideo {
  std::string video_id;
  labels::VideoMeta meta;
  segnet::NetworkInput input;
  std::vector<double> label;
};

LoadedVideo load_video(const DatasetEntry& entry);
std::vector<LoadedVideo> load_videos(const DatasetIndex& index, const std::vector<std::string>& ids);

}  // namespace choreoseg::pipeline
