#include "choreoseg/labels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>

#include "choreoseg/error.hpp"

namespace choreoseg::labels {

void VideoMeta::validate() const {
  if (!(fps > 0.0) || !std::isfinite(fps)) throw ConfigError("fps must be positive");
  if (!(tempo_bpm > 0.0) || !std::isfinite(tempo_bpm)) throw ConfigError("tempo_bpm must be positive");
  if (n_beats == 0) throw ConfigError("n_beats must be positive");
  if (!(onset_c0 >= 0.0) || !std::isfinite(onset_c0)) throw ConfigError("c0_seconds must be non-negative");
}

nlohmann::json VideoMeta::to_json() const {
  return {{"video_id", video_id},   {"fps", fps},
          {"tempo_bpm", tempo_bpm}, {"n_beats", n_beats},
          {"c0_seconds", onset_c0}, {"total_frames", total_frames}};
}

VideoMeta VideoMeta::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("video meta must be a JSON object");
  VideoMeta m;
  try {
    m.video_id = j.at("video_id").get<std::string>();
    m.fps = j.at("fps").get<double>();
    m.tempo_bpm = j.at("tempo_bpm").get<double>();
    const auto beats = j.at("n_beats").get<long long>();
    if (beats <= 0) throw ConfigError("n_beats must be positive");
    m.n_beats = static_cast<std::size_t>(beats);
    m.onset_c0 = j.value("c0_seconds", 0.0);
    const auto total = j.value("total_frames", 0LL);
    if (total < 0) throw ConfigError("total_frames must be non-negative");
    m.total_frames = static_cast<std::size_t>(total);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("video meta: ") + e.what());
  }
  if (m.video_id.empty()) throw ConfigError("video_id must be non-empty");
  m.validate();
  return m;
}

std::vector<double> candidates(const VideoMeta& meta) {
  meta.validate();
  std::vector<double> out(2 * meta.n_beats);
  const double half_beat = 60.0 / meta.tempo_bpm / 2.0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = meta.onset_c0 + half_beat * double(i);
  return out;
}

std::vector<std::size_t> candidate_frames(const VideoMeta& meta) {
  std::vector<std::size_t> out;
  for (double c : candidates(meta)) out.push_back(static_cast<std::size_t>(std::llround(c * meta.fps)));
  return out;
}

double sigma_frames(const VideoMeta& meta) { return meta.fps * 60.0 / (3.0 * meta.tempo_bpm); }

double tolerance_frames(const VideoMeta& meta) { return meta.fps * 60.0 / (2.0 * meta.tempo_bpm); }

std::vector<double> annotation_label(std::span<const std::size_t> points, double sigma,
                                     std::size_t frames) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  std::vector<double> out(frames, 0.0);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t t = 0; t < frames; ++t) {
    double sum = 0.0;
    for (std::size_t p : points) {
      const double d = double(t) - double(p);
      sum += std::exp(-d * d * inv);
    }
    out[t] = std::min(sum, 1.0);
  }
  return out;
}

SegmentationLabel ground_truth(std::span<const std::vector<std::size_t>> annotators, double sigma,
                               std::size_t frames) {
  if (annotators.empty()) throw ConfigError("ground truth needs at least one annotator");
  SegmentationLabel label;
  label.sigma_frames = sigma;
  label.values.assign(frames, 0.0);
  for (const auto& points : annotators) {
    const auto curve = annotation_label(points, sigma, frames);
    for (std::size_t t = 0; t < frames; ++t) label.values[t] += curve[t];
  }
  const double n = double(annotators.size());
  for (double& v : label.values) v /= n;
  return label;
}

void validate_points(std::span<const std::size_t> points, std::size_t frames) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i] >= frames) {
      throw ConfigError("point " + std::to_string(points[i]) + " outside [0, " +
                        std::to_string(frames) + ")");
    }
    if (i > 0 && points[i] <= points[i - 1]) {
      throw ConfigError("points must be strictly increasing (" + std::to_string(points[i - 1]) +
                        " then " + std::to_string(points[i]) + ")");
    }
  }
}

std::vector<double> proportion_grid(std::size_t n_beats) {
  std::vector<double> grid;
  for (std::size_t k = 2; k <= 2 * n_beats; ++k) grid.push_back(double(k) / 2.0);
  return grid;
}

std::vector<double> segmentation_proportion(std::span<const std::vector<double>> selections,
                                            std::size_t n_beats) {
  if (n_beats == 0) throw ConfigError("n_beats must be positive");
  std::vector<double> counts(2 * n_beats - 1, 0.0);
  for (const auto& sel : selections) {
    std::vector<bool> hit(counts.size(), false);
    for (double b : sel) {
      const double twice = 2.0 * b;
      const double k = std::round(twice);
      if (std::abs(twice - k) > 1e-9 || k < 2.0 || k > double(2 * n_beats)) {
        throw ConfigError("selection " + std::to_string(b) + " is not a grid beat in [1, " +
                          std::to_string(n_beats) + "]");
      }
      hit[static_cast<std::size_t>(k) - 2] = true;
    }
    for (std::size_t i = 0; i < hit.size(); ++i) counts[i] += hit[i] ? 1.0 : 0.0;
  }
  if (!selections.empty()) {
    for (double& c : counts) c /= double(selections.size());
  }
  return counts;
}

std::vector<std::vector<std::size_t>> AnnotationSet::point_lists() const {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& a : annotators) out.push_back(a.points_frames);
  return out;
}

SegmentationLabel AnnotationSet::label() const {
  if (meta.total_frames == 0) throw ConfigError("annotation set for " + meta.video_id + " lacks total_frames");
  const auto lists = point_lists();
  return ground_truth(lists, sigma_frames(meta), meta.total_frames);
}

nlohmann::json AnnotationSet::to_json() const {
  nlohmann::json j = meta.to_json();
  j["annotators"] = nlohmann::json::array();
  for (const auto& a : annotators) {
    j["annotators"].push_back({{"id", a.id}, {"points_frames", a.points_frames}});
  }
  return j;
}

AnnotationSet AnnotationSet::from_json(const nlohmann::json& j) {
  AnnotationSet set;
  set.meta = VideoMeta::from_json(j);
  try {
    for (const auto& a : j.value("annotators", nlohmann::json::array())) {
      Annotator ann;
      ann.id = a.at("id").is_string() ? a.at("id").get<std::string>() : a.at("id").dump();
      for (const auto& p : a.at("points_frames")) {
        const auto v = p.get<long long>();
        if (v < 0) throw ConfigError("annotator " + ann.id + ": negative frame");
        ann.points_frames.push_back(static_cast<std::size_t>(v));
      }
      if (set.meta.total_frames > 0) validate_points(ann.points_frames, set.meta.total_frames);
      set.annotators.push_back(std::move(ann));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("annotators: ") + e.what());
  }
  return set;
}

AnnotationSet read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return AnnotationSet::from_json(j);
}

void write_annotations(const std::filesystem::path& path, const AnnotationSet& set) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << set.to_json().dump(2) << '\n';
}

void write_label_csv(std::ostream& out, std::span<const double> values, std::string_view column) {
  out << "frame," << column << '\n';
  char buf[32];
  for (std::size_t t = 0; t < values.size(); ++t) {
    const auto res = std::to_chars(buf, buf + sizeof buf, values[t]);
    out << t << ',' << std::string_view(buf, res.ptr - buf) << '\n';
  }
}

}  // namespace choreoseg::labels
