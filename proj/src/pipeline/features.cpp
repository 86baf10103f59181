#include "choreoseg/pipeline/features.hpp"

#include <fstream>

#include "choreoseg/binary_io.hpp"
#include "choreoseg/error.hpp"
#include "choreoseg/keypoint_io.hpp"

namespace choreoseg::pipeline {

namespace fs = std::filesystem;

namespace {
constexpr std::string_view kBonesMagic = "DBON";
}

segnet::NetworkInput VideoFeatures::to_input() const {
  return segnet::make_input(bones, spectrogram, fps);
}

VideoFeatures extract_features(const std::vector<skeleton::RawDetectionFrame>& detections,
                               const audio::Waveform& wave, double fps, std::size_t frames,
                               const skeleton::SkeletonTopology& topo,
                               const audio::SpectrogramConfig& spec_cfg) {
  if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  if (frames == 0) frames = skeleton::frame_count(detections);
  if (frames == 0) throw ConfigError("no keypoint frames");
  VideoFeatures f;
  f.fps = fps;
  const auto track = skeleton::interpolate_missing(skeleton::assemble_track(detections, frames, fps));
  f.bones = skeleton::bone_features(track, topo);
  f.spectrogram = audio::normalize_spectrogram(audio::mel_spectrogram(wave, spec_cfg));
  return f;
}

void write_bones(const fs::path& path, const std::vector<double>& bones, double fps) {
  if (bones.size() % skeleton::kBoneFeatures != 0) throw ShapeError("bone features must hold 134 values per frame");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  binary::write_bytes(out, kBonesMagic);
  binary::write_u32(out, static_cast<std::uint32_t>(bones.size() / skeleton::kBoneFeatures));
  binary::write_u32(out, static_cast<std::uint32_t>(skeleton::kBoneFeatures));
  binary::write_f32(out, static_cast<float>(fps));
  for (double v : bones) binary::write_f32(out, static_cast<float>(v));
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<double> read_bones(const fs::path& path, double* fps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  if (binary::read_string(in, 4, "bone cache magic") != kBonesMagic) {
    throw ParseError(path.string() + ": not a bone cache");
  }
  const std::uint32_t frames = binary::read_u32(in, "bone cache header");
  const std::uint32_t width = binary::read_u32(in, "bone cache header");
  if (width != skeleton::kBoneFeatures) {
    throw ParseError(path.string() + ": expected 134 features per frame, got " + std::to_string(width));
  }
  const double rate = binary::read_f32(in, "bone cache header");
  if (fps != nullptr) *fps = rate;
  std::vector<double> bones(std::size_t{frames} * width);
  for (double& v : bones) v = binary::read_f32(in, "bone cache payload");
  return bones;
}

void save_features(const VideoFeatures& f, const fs::path& bones_path, const fs::path& spectrogram_path) {
  write_bones(bones_path, f.bones, f.fps);
  audio::write_spectrogram(spectrogram_path, f.spectrogram);
}

VideoFeatures load_features(const fs::path& bones_path, const fs::path& spectrogram_path) {
  VideoFeatures f;
  f.bones = read_bones(bones_path, &f.fps);
  f.spectrogram = audio::read_spectrogram(spectrogram_path);
  return f;
}

void extract_index_features(DatasetIndex& index, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  for (auto& e : index.entries) {
    if (e.keypoints.empty() || e.audio.empty()) {
      throw ConfigError("video " + e.video_id + " lacks keypoint or audio paths");
    }
    const auto detections = skeleton::read_keypoints_jsonl(e.keypoints);
    const auto wave = audio::read_wav(e.audio);
    const auto f = extract_features(detections, wave, e.meta.fps, e.meta.total_frames);
    e.bones = out_dir / (e.video_id + ".bones");
    e.spectrogram = out_dir / (e.video_id + ".spec");
    save_features(f, e.bones, e.spectrogram);
    e.meta.total_frames = f.frames();
  }
}

LoadedVideo load_video(const DatasetEntry& entry) {
  LoadedVideo v;
  v.video_id = entry.video_id;
  v.meta = entry.meta;
  const auto f = load_features(entry.bones, entry.spectrogram);
  if (v.meta.total_frames != 0 && v.meta.total_frames != f.frames()) {
    throw ConfigError("video " + entry.video_id + ": meta says " + std::to_string(v.meta.total_frames) +
                      " frames, features have " + std::to_string(f.frames()));
  }
  v.meta.total_frames = f.frames();
  v.input = segnet::make_input(f.bones, f.spectrogram, v.meta.fps);
  auto ann = labels::read_annotations(entry.annotations);
  ann.meta = v.meta;
  for (const auto& a : ann.annotators) labels::validate_points(a.points_frames, v.meta.total_frames);
  v.label = ann.label().values;
  return v;
}

std::vector<LoadedVideo> load_videos(const DatasetIndex& index, const std::vector<std::string>& ids) {
  std::vector<LoadedVideo> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(load_video(index.find(id)));
  return out;
}

}  // namespace choreoseg::pipeline
