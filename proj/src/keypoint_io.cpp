#include "choreoseg/keypoint_io.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <string>

#include "choreoseg/error.hpp"

namespace choreoseg::skeleton {

namespace {

constexpr std::size_t kHalpe136 = 136;
constexpr std::size_t kHalpeLeftHand = 94;

PersonDetection parse_person(const nlohmann::json& person, std::size_t line_no) {
  const auto where = [line_no] { return "keypoints line " + std::to_string(line_no) + ": "; };
  if (!person.is_object() || !person.contains("kp") || !person["kp"].is_array()) {
    throw ParseError(where() + "person entry needs a \"kp\" array");
  }
  const auto& kp = person["kp"];
  if (kp.size() != kNumKeypoints) {
    throw ParseError(where() + "expected " + std::to_string(kNumKeypoints) + " keypoints, got " +
                     std::to_string(kp.size()));
  }
  PersonDetection det;
  for (std::size_t i = 0; i < kNumKeypoints; ++i) {
    const auto& p = kp[i];
    if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() ||
        !p[2].is_number()) {
      throw ParseError(where() + "keypoint " + std::to_string(i) + " must be [x, y, c]");
    }
    det.keypoints[i] = {p[0].get<double>(), p[1].get<double>()};
    const double c = p[2].get<double>();
    if (!(c >= 0.0 && c <= 1.0)) {
      throw ParseError(where() + "confidence of keypoint " + std::to_string(i) +
                       " outside [0, 1]");
    }
    det.confidences[i] = c;
  }
  return det;
}

std::size_t digits_of(const std::string& s) {
  std::string digits;
  for (char c : s) {
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
    } else if (!digits.empty()) {
      break;
    }
  }
  if (digits.empty()) throw ParseError("AlphaPose image_id '" + s + "' carries no frame number");
  return std::stoul(digits);
}

}  // namespace

std::vector<RawDetectionFrame> read_keypoints_jsonl(std::istream& in) {
  std::vector<RawDetectionFrame> frames;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("keypoints line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("idx") || !obj["idx"].is_number_unsigned() ||
        !obj.contains("people") || !obj["people"].is_array()) {
      throw ParseError("keypoints line " + std::to_string(line_no) +
                       ": expected {\"idx\": int, \"people\": [...]}");
    }
    RawDetectionFrame frame;
    frame.frame_index = obj["idx"].get<std::size_t>();
    for (const auto& person : obj["people"]) frame.persons.push_back(parse_person(person, line_no));
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<RawDetectionFrame> read_keypoints_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open keypoint file " + path.string());
  return read_keypoints_jsonl(in);
}

void write_keypoints_jsonl(std::ostream& out, const std::vector<RawDetectionFrame>& frames) {
  for (const auto& frame : frames) {
    nlohmann::json people = nlohmann::json::array();
    for (const auto& person : frame.persons) {
      nlohmann::json kp = nlohmann::json::array();
      for (std::size_t i = 0; i < kNumKeypoints; ++i) {
        kp.push_back({person.keypoints[i].x, person.keypoints[i].y, person.confidences[i]});
      }
      people.push_back({{"kp", std::move(kp)}});
    }
    out << nlohmann::json{{"idx", frame.frame_index}, {"people", std::move(people)}}.dump()
        << '\n';
  }
}

std::vector<RawDetectionFrame> import_alphapose(const nlohmann::json& results) {
  if (!results.is_array()) throw ParseError("AlphaPose results must be a JSON array");
  std::map<std::size_t, RawDetectionFrame> by_frame;
  for (const auto& det : results) {
    if (!det.is_object() || !det.contains("image_id") || !det.contains("keypoints")) {
      throw ParseError("AlphaPose entry needs image_id and keypoints");
    }
    const auto& id = det["image_id"];
    const std::size_t frame =
        id.is_number_unsigned() ? id.get<std::size_t>() : digits_of(id.get<std::string>());
    const auto flat = det["keypoints"].get<std::vector<double>>();
    const std::size_t points = flat.size() / 3;
    if (flat.size() % 3 != 0 || (points != kNumKeypoints && points != kHalpe136)) {
      throw ParseError("AlphaPose keypoints must hold 68 or 136 (x, y, c) triples, got " +
                       std::to_string(flat.size()) + " values");
    }
    PersonDetection person;
    for (std::size_t i = 0; i < kNumKeypoints; ++i) {
      std::size_t src = i;
      if (points == kHalpe136 && i >= 26) src = kHalpeLeftHand + (i - 26);
      person.keypoints[i] = {flat[3 * src], flat[3 * src + 1]};
      person.confidences[i] = std::clamp(flat[3 * src + 2], 0.0, 1.0);
    }
    auto& entry = by_frame[frame];
    entry.frame_index = frame;
    entry.persons.push_back(person);
  }
  std::vector<RawDetectionFrame> frames;
  for (auto& [_, f] : by_frame) frames.push_back(std::move(f));
  return frames;
}

std::size_t frame_count(const std::vector<RawDetectionFrame>& frames) {
  std::size_t n = 0;
  for (const auto& f : frames) n = std::max(n, f.frame_index + 1);
  return n;
}

}  // namespace choreoseg::skeleton
