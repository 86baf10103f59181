#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "choreoseg/error.hpp"
#include "choreoseg/keypoint_io.hpp"
#include "choreoseg/rng.hpp"
#include "choreoseg/skeleton.hpp"

using namespace choreoseg;
using namespace choreoseg::skeleton;

namespace {

PersonDetection person_with_sum(double per_point, double x = 0.0) {
  PersonDetection p;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    p.keypoints[i] = {x + double(i), double(i) * 2.0};
    p.confidences[i] = per_point;
  }
  return p;
}

KeypointSequence blank_track(std::size_t frames) {
  KeypointSequence s;
  s.fps = 60.0;
  s.frames.resize(frames);
  s.detected.resize(frames);
  for (auto& d : s.detected) d.fill(false);
  return s;
}

std::array<Point, kNumKeypoints> random_pose(Rng& rng) {
  std::array<Point, kNumKeypoints> p{};
  for (auto& q : p) q = {rng.uniform(-300.0, 300.0), rng.uniform(-300.0, 300.0)};
  return p;
}

}  // namespace

TEST_CASE("resolve_dancer picks the largest confidence sum") {
  RawDetectionFrame empty;
  CHECK_FALSE(resolve_dancer(empty).has_value());

  RawDetectionFrame one;
  one.persons.push_back(person_with_sum(0.5, 7.0));
  REQUIRE(resolve_dancer(one).has_value());
  CHECK(resolve_dancer(one)->keypoints[0].x == 7.0);

  RawDetectionFrame two;
  two.persons.push_back(person_with_sum(30.0 / 68.0, 1.0));
  two.persons.push_back(person_with_sum(45.0 / 68.0, 2.0));
  CHECK(resolve_dancer(two)->keypoints[0].x == 2.0);
}

TEST_CASE("resolve_dancer tie-break is lowest index over every permutation") {
  // Four people, two share the top sum. Whatever the order, the winner must be
  // the first top-sum person in that order.
  std::vector<PersonDetection> people = {person_with_sum(0.3, 0.0), person_with_sum(0.7, 1.0),
                                         person_with_sum(0.7, 2.0), person_with_sum(0.5, 3.0)};
  std::vector<int> order = {0, 1, 2, 3};
  int checked = 0;
  do {
    RawDetectionFrame f;
    for (int i : order) f.persons.push_back(people[i]);
    double expected = -1.0;
    double best = -1.0;
    for (const auto& p : f.persons) {
      const double s = p.confidence_sum();
      if (s > best) {
        best = s;
        expected = p.keypoints[0].x;
      }
    }
    CHECK(resolve_dancer(f)->keypoints[0].x == expected);
    ++checked;
  } while (std::next_permutation(order.begin(), order.end()));
  CHECK(checked == 24);

  RawDetectionFrame tie;
  tie.persons.push_back(person_with_sum(40.0 / 68.0, 10.0));
  tie.persons.push_back(person_with_sum(40.0 / 68.0, 20.0));
  CHECK(resolve_dancer(tie)->keypoints[0].x == 10.0);
}

TEST_CASE("interpolate_missing fills interior gaps linearly") {
  auto s = blank_track(21);
  s.frames[10][0] = {0.0, 0.0};
  s.frames[20][0] = {10.0, 20.0};
  s.detected[10][0] = true;
  s.detected[20][0] = true;
  const auto out = interpolate_missing(s);
  CHECK(out.frames[15][0].x == doctest::Approx(5.0));
  CHECK(out.frames[15][0].y == doctest::Approx(10.0));
  CHECK(out.frames[12][0].x == doctest::Approx(2.0));
  CHECK(out.frames[12][0].y == doctest::Approx(4.0));
  // Leading gap takes the first detection, trailing frames the last.
  CHECK(out.frames[0][0] == Point{0.0, 0.0});
  CHECK(out.frames[20][0] == Point{10.0, 20.0});
}

TEST_CASE("interpolate_missing boundary and never-detected rules") {
  auto s = blank_track(12);
  s.frames[5][3] = {4.0, -2.0};
  s.detected[5][3] = true;
  const auto out = interpolate_missing(s);
  for (std::size_t t = 0; t < 12; ++t) {
    CHECK(out.frames[t][3] == Point{4.0, -2.0});
    CHECK(out.frames[t][4] == Point{0.0, 0.0});
  }
}

TEST_CASE("interpolate_missing is idempotent and keeps detections bit-identical") {
  Rng rng(11);
  auto s = blank_track(60);
  for (std::size_t t = 0; t < 60; ++t) {
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      s.frames[t][i] = {rng.uniform(0.0, 1000.0), rng.uniform(0.0, 1000.0)};
      s.detected[t][i] = rng.uniform() > 0.3;
    }
  }
  const auto once = interpolate_missing(s);
  const auto twice = interpolate_missing(once);
  for (std::size_t t = 0; t < 60; ++t) {
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      CHECK(std::isfinite(once.frames[t][i].x));
      if (s.detected[t][i]) CHECK(once.frames[t][i] == s.frames[t][i]);
      CHECK(twice.frames[t][i] == once.frames[t][i]);
    }
  }
}

TEST_CASE("bone vectors are rescaled to length 0.5") {
  const auto& topo = SkeletonTopology::halpe68();
  CHECK(topo.edges().size() == kNumBones);
  std::array<Point, kNumKeypoints> pose{};
  const auto [parent, child] = topo.edges()[0];
  pose[child] = {3.0, 4.0};
  const auto bones = bone_vectors(pose, topo);
  CHECK(bones[0].x == doctest::Approx(0.3));
  CHECK(bones[0].y == doctest::Approx(0.4));
  // Every other bone joins two points at the origin.
  for (std::size_t e = 0; e < kNumBones; ++e) {
    const auto [p, c] = topo.edges()[e];
    if (p != child && c != child) CHECK(bones[e] == Point{0.0, 0.0});
  }
}

TEST_CASE("bone vectors are invariant under scaling and translation") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pose = random_pose(rng);
    const double scale = rng.uniform(0.1, 10.0);
    const Point shift{rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0)};
    std::array<Point, kNumKeypoints> moved{};
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      moved[i] = {pose[i].x * scale + shift.x, pose[i].y * scale + shift.y};
    }
    const auto a = bone_vectors(pose);
    const auto b = bone_vectors(moved);
    REQUIRE(a.size() == kNumBones);
    for (std::size_t e = 0; e < kNumBones; ++e) {
      CHECK(std::hypot(a[e].x, a[e].y) == doctest::Approx(0.5).epsilon(1e-6));
      CHECK(a[e].x == doctest::Approx(b[e].x).epsilon(1e-9));
      CHECK(a[e].y == doctest::Approx(b[e].y).epsilon(1e-9));
    }
  }
}

TEST_CASE("topology validation rejects non-trees") {
  const auto span = SkeletonTopology::halpe68().edges();
  const std::vector<Edge> edges(span.begin(), span.end());
  CHECK_NOTHROW(SkeletonTopology{edges});

  auto short_list = edges;
  short_list.pop_back();
  CHECK_THROWS_AS(SkeletonTopology{short_list}, ConfigError);

  auto cyclic = edges;
  cyclic.back() = {cyclic.front().first, cyclic.front().second};
  CHECK_THROWS_AS(SkeletonTopology{cyclic}, ConfigError);

  auto out_of_range = edges;
  out_of_range[3].second = 68;
  CHECK_THROWS_AS(SkeletonTopology{out_of_range}, ConfigError);
}

TEST_CASE("bone_features lays out T x 134") {
  auto s = blank_track(4);
  Rng rng(9);
  for (auto& f : s.frames) f = random_pose(rng);
  const auto feats = bone_features(s);
  REQUIRE(feats.size() == 4 * kBoneFeatures);
  const auto second = bone_vectors(s.frames[1]);
  CHECK(feats[kBoneFeatures + 2 * 5] == second[5].x);
  CHECK(feats[kBoneFeatures + 2 * 5 + 1] == second[5].y);
}

TEST_CASE("keypoint JSONL round trip and schema errors") {
  std::vector<RawDetectionFrame> frames(2);
  frames[0].frame_index = 0;
  frames[0].persons.push_back(person_with_sum(0.5));
  frames[1].frame_index = 3;
  std::stringstream ss;
  write_keypoints_jsonl(ss, frames);
  const auto back = read_keypoints_jsonl(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].persons.size() == 1);
  CHECK(back[0].persons[0].keypoints[10] == frames[0].persons[0].keypoints[10]);
  CHECK(back[1].frame_index == 3);
  CHECK(frame_count(back) == 4);

  std::string row = R"({"idx": 0, "people": [{"kp": [)";
  for (int i = 0; i < 67; ++i) row += std::string(i ? "," : "") + "[1, 2, 0.5]";
  row += "]}]}\n";
  std::istringstream bad(row);
  CHECK_THROWS_AS(read_keypoints_jsonl(bad), ParseError);

  std::istringstream garbage("{not json\n");
  CHECK_THROWS_AS(read_keypoints_jsonl(garbage), ParseError);
}

TEST_CASE("AlphaPose import maps the 136-point layout") {
  std::vector<double> flat(136 * 3, 0.0);
  for (std::size_t i = 0; i < 136; ++i) {
    flat[3 * i] = double(i);
    flat[3 * i + 1] = -double(i);
    flat[3 * i + 2] = 0.9;
  }
  nlohmann::json results = nlohmann::json::array();
  results.push_back({{"image_id", "frame_000042.jpg"}, {"keypoints", flat}});
  const auto frames = import_alphapose(results);
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].frame_index == 42);
  const auto& kp = frames[0].persons[0].keypoints;
  CHECK(kp[25].x == 25.0);
  CHECK(kp[26].x == 94.0);
  CHECK(kp[67].x == 135.0);
}

TEST_CASE("assemble_track marks missing frames undetected") {
  std::vector<RawDetectionFrame> frames(1);
  frames[0].frame_index = 2;
  frames[0].persons.push_back(person_with_sum(1.0));
  frames[0].persons[0].confidences[7] = 0.0;
  const auto track = assemble_track(frames, 4, 30.0);
  REQUIRE(track.size() == 4);
  CHECK_FALSE(track.detected[0][0]);
  CHECK(track.detected[2][0]);
  CHECK_FALSE(track.detected[2][7]);
  const auto filled = interpolate_missing(track);
  CHECK(filled.frames[0][0] == frames[0].persons[0].keypoints[0]);
}
