#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace choreoseg::skeleton {

inline constexpr std::size_t kNumKeypoints = 68;
inline constexpr std::size_t kNumBones = 67;
inline constexpr std::size_t kBoneFeatures = kNumBones * 2;
/// Bone vectors are rescaled to this length.
inline constexpr double kBoneLength = 0.5;
/// Raw bones shorter than this (pixels) are emitted as (0,0).
inline constexpr double kMinBoneLength = 1e-6;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct PersonDetection {
  std::array<Point, kNumKeypoints> keypoints{};
  std::array<double, kNumKeypoints> confidences{};

  double confidence_sum() const;
};

struct RawDetectionFrame {
  std::size_t frame_index = 0;
  std::vector<PersonDetection> persons;
};

/// One dancer's keypoints over T frames. `detected[t][i]` marks entries that
/// came from a detection rather than interpolation.
struct KeypointSequence {
  std::vector<std::array<Point, kNumKeypoints>> frames;
  std::vector<std::array<bool, kNumKeypoints>> detected;
  double fps = 0.0;

  std::size_t size() const { return frames.size(); }
};

using Edge = std::pair<std::size_t, std::size_t>;  // (parent, child)

/// Parent/child keypoint pairs forming a tree over the 68 keypoints.
class SkeletonTopology {
 public:
  /// Validates that `edges` is a 67-edge tree over 68 nodes; throws ConfigError.
  explicit SkeletonTopology(std::vector<Edge> edges);

  /// Halpe-26 body tree rooted at the hip plus two 21-point hand trees hung
  /// from the body wrists.
  static const SkeletonTopology& halpe68();

  /// Reads a JSON array of 67 [parent, child] pairs.
  static SkeletonTopology load(const std::filesystem::path& path);

  std::span<const Edge> edges() const { return edges_; }

 private:
  std::vector<Edge> edges_;
};

using BoneFrame = std::array<Point, kNumBones>;

/// Person with the greatest confidence sum; ties go to the lowest index.
std::optional<PersonDetection> resolve_dancer(const RawDetectionFrame& frame);

/// Keypoints with confidence exactly 0 count as undetected.
inline bool is_detected(double confidence) { return confidence > 0.0; }

/// Picks the dancer in every frame and assembles a sequence of `frame_count`
/// frames; frames without any entry have every keypoint undetected.
KeypointSequence assemble_track(std::span<const RawDetectionFrame> frames,
                                std::size_t frame_count, double fps);

/// Fills undetected entries by linear interpolation between the nearest
/// detected frames. Leading/trailing gaps take the nearest detected value;
/// keypoints never detected become (0,0). Detected entries are untouched.
KeypointSequence interpolate_missing(const KeypointSequence& track);

BoneFrame bone_vectors(std::span<const Point, kNumKeypoints> keypoints,
                       const SkeletonTopology& topo = SkeletonTopology::halpe68());

/// Bone vectors of every frame flattened to T x 134 ([dx0, dy0, dx1, ...]).
std::vector<double> bone_features(const KeypointSequence& track,
                                  const SkeletonTopology& topo = SkeletonTopology::halpe68());

}  // namespace choreoseg::skeleton
