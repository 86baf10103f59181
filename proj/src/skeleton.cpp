#include "choreoseg/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "choreoseg/error.hpp"
#include "json.hpp"

namespace choreoseg::skeleton {

namespace {

constexpr std::size_t kBodyPoints = 26;
constexpr std::size_t kHandPoints = 21;
constexpr std::size_t kLeftHand = kBodyPoints;
constexpr std::size_t kRightHand = kBodyPoints + kHandPoints;

// Halpe body indices used below.
constexpr std::size_t kNose = 0, kLEye = 1, kREye = 2, kLEar = 3, kREar = 4;
constexpr std::size_t kLShoulder = 5, kRShoulder = 6, kLElbow = 7, kRElbow = 8;
constexpr std::size_t kLWrist = 9, kRWrist = 10, kLHip = 11, kRHip = 12;
constexpr std::size_t kLKnee = 13, kRKnee = 14, kLAnkle = 15, kRAnkle = 16;
constexpr std::size_t kHead = 17, kNeck = 18, kHip = 19;
constexpr std::size_t kLBigToe = 20, kRBigToe = 21, kLSmallToe = 22;
constexpr std::size_t kRSmallToe = 23, kLHeel = 24, kRHeel = 25;

std::vector<Edge> halpe68_edges() {
  std::vector<Edge> edges = {
      {kHip, kNeck},           {kNeck, kHead},          {kNeck, kNose},
      {kNose, kLEye},          {kNose, kREye},          {kLEye, kLEar},
      {kREye, kREar},          {kNeck, kLShoulder},     {kNeck, kRShoulder},
      {kLShoulder, kLElbow},   {kLElbow, kLWrist},      {kRShoulder, kRElbow},
      {kRElbow, kRWrist},      {kHip, kLHip},           {kHip, kRHip},
      {kLHip, kLKnee},         {kLKnee, kLAnkle},       {kRHip, kRKnee},
      {kRKnee, kRAnkle},       {kLAnkle, kLBigToe},     {kLAnkle, kLSmallToe},
      {kLAnkle, kLHeel},       {kRAnkle, kRBigToe},     {kRAnkle, kRSmallToe},
      {kRAnkle, kRHeel},
  };
  // Hand layout: 0 wrist, then four joints per finger (thumb..pinky).
  auto add_hand = [&edges](std::size_t offset, std::size_t body_wrist) {
    edges.emplace_back(body_wrist, offset);
    for (std::size_t finger = 0; finger < 5; ++finger) {
      std::size_t parent = offset;
      for (std::size_t joint = 0; joint < 4; ++joint) {
        const std::size_t child = offset + 1 + finger * 4 + joint;
        edges.emplace_back(parent, child);
        parent = child;
      }
    }
  };
  add_hand(kLeftHand, kLWrist);
  add_hand(kRightHand, kRWrist);
  return edges;
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

Point lerp_point(const Point& a, const Point& b, double wa, double wb) {
  return {wa * a.x + wb * b.x, wa * a.y + wb * b.y};
}

}  // namespace

double PersonDetection::confidence_sum() const {
  return std::accumulate(confidences.begin(), confidences.end(), 0.0);
}

SkeletonTopology::SkeletonTopology(std::vector<Edge> edges) : edges_(std::move(edges)) {
  if (edges_.size() != kNumBones) {
    throw ConfigError("skeleton topology needs " + std::to_string(kNumBones) + " edges, got " +
                      std::to_string(edges_.size()));
  }
  // 67 edges over 68 nodes without a cycle is a spanning tree.
  std::vector<std::size_t> parent(kNumKeypoints);
  std::iota(parent.begin(), parent.end(), 0);
  for (const auto& [a, b] : edges_) {
    if (a >= kNumKeypoints || b >= kNumKeypoints || a == b) {
      throw ConfigError("skeleton edge (" + std::to_string(a) + ", " + std::to_string(b) +
                        ") is out of range or a self-loop");
    }
    const std::size_t ra = find_root(parent, a);
    const std::size_t rb = find_root(parent, b);
    if (ra == rb) {
      throw ConfigError("skeleton edge (" + std::to_string(a) + ", " + std::to_string(b) +
                        ") closes a cycle");
    }
    parent[ra] = rb;
  }
}

const SkeletonTopology& SkeletonTopology::halpe68() {
  static const SkeletonTopology topo(halpe68_edges());
  return topo;
}

SkeletonTopology SkeletonTopology::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open topology file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("topology file " + path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError("topology file must hold a JSON array of pairs");
  std::vector<Edge> edges;
  for (const auto& pair : doc) {
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_unsigned() ||
        !pair[1].is_number_unsigned()) {
      throw ParseError("topology entries must be [parent, child] index pairs");
    }
    edges.emplace_back(pair[0].get<std::size_t>(), pair[1].get<std::size_t>());
  }
  return SkeletonTopology(std::move(edges));
}

std::optional<PersonDetection> resolve_dancer(const RawDetectionFrame& frame) {
  if (frame.persons.empty()) return std::nullopt;
  std::size_t best = 0;
  double best_sum = frame.persons[0].confidence_sum();
  for (std::size_t j = 1; j < frame.persons.size(); ++j) {
    const double sum = frame.persons[j].confidence_sum();
    if (sum > best_sum) {
      best = j;
      best_sum = sum;
    }
  }
  return frame.persons[best];
}

KeypointSequence assemble_track(std::span<const RawDetectionFrame> frames,
                                std::size_t frame_count, double fps) {
  KeypointSequence track;
  track.fps = fps;
  track.frames.assign(frame_count, {});
  track.detected.assign(frame_count, {});
  for (const auto& frame : frames) {
    if (frame.frame_index >= frame_count) {
      throw ShapeError("detection frame index " + std::to_string(frame.frame_index) +
                       " outside sequence of " + std::to_string(frame_count) + " frames");
    }
    const auto dancer = resolve_dancer(frame);
    if (!dancer) continue;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      if (is_detected(dancer->confidences[i])) {
        track.frames[frame.frame_index][i] = dancer->keypoints[i];
        track.detected[frame.frame_index][i] = true;
      }
    }
  }
  return track;
}

KeypointSequence interpolate_missing(const KeypointSequence& track) {
  KeypointSequence out = track;
  const std::size_t frames = track.size();
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    hits.clear();
    for (std::size_t t = 0; t < frames; ++t) {
      if (track.detected[t][i]) hits.push_back(t);
    }
    if (hits.empty()) {
      for (std::size_t t = 0; t < frames; ++t) out.frames[t][i] = Point{};
      continue;
    }
    for (std::size_t t = 0; t < hits.front(); ++t) out.frames[t][i] = track.frames[hits.front()][i];
    for (std::size_t t = hits.back() + 1; t < frames; ++t) {
      out.frames[t][i] = track.frames[hits.back()][i];
    }
    for (std::size_t k = 0; k + 1 < hits.size(); ++k) {
      const std::size_t tp = hits[k];
      const std::size_t tn = hits[k + 1];
      const double span = static_cast<double>(tn - tp);
      for (std::size_t t = tp + 1; t < tn; ++t) {
        const double wp = static_cast<double>(tn - t) / span;
        const double wn = static_cast<double>(t - tp) / span;
        out.frames[t][i] = lerp_point(track.frames[tp][i], track.frames[tn][i], wp, wn);
      }
    }
  }
  return out;
}

BoneFrame bone_vectors(std::span<const Point, kNumKeypoints> keypoints,
                       const SkeletonTopology& topo) {
  BoneFrame bones{};
  const auto edges = topo.edges();
  for (std::size_t e = 0; e < kNumBones; ++e) {
    const Point& parent = keypoints[edges[e].first];
    const Point& child = keypoints[edges[e].second];
    const double dx = child.x - parent.x;
    const double dy = child.y - parent.y;
    const double len = std::hypot(dx, dy);
    if (len < kMinBoneLength) continue;
    bones[e] = {kBoneLength * dx / len, kBoneLength * dy / len};
  }
  return bones;
}

std::vector<double> bone_features(const KeypointSequence& track, const SkeletonTopology& topo) {
  std::vector<double> out;
  out.reserve(track.size() * kBoneFeatures);
  for (const auto& frame : track.frames) {
    const BoneFrame bones = bone_vectors(frame, topo);
    for (const auto& b : bones) {
      out.push_back(b.x);
      out.push_back(b.y);
    }
  }
  return out;
}

}  // namespace choreoseg::skeleton
