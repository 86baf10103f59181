#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "choreoseg/skeleton.hpp"
#include "json.hpp"

namespace choreoseg::skeleton {

/// JSON Lines, one object per frame:
///   {"idx": 0, "people": [{"kp": [[x, y, c], ... 68 entries]}]}
/// Throws ParseError on malformed lines or keypoint counts other than 68.
std::vector<RawDetectionFrame> read_keypoints_jsonl(std::istream& in);
std::vector<RawDetectionFrame> read_keypoints_jsonl(const std::filesystem::path& path);

void write_keypoints_jsonl(std::ostream& out, const std::vector<RawDetectionFrame>& frames);

/// Converts an AlphaPose result array ({"image_id", "keypoints": [x,y,c,...]}
/// per detection) into frames. Accepts 68-point layouts directly and the
/// 136-point Halpe layout (body 0-25, hands 94-135; face points dropped).
/// Frame numbers come from the digits of image_id.
std::vector<RawDetectionFrame> import_alphapose(const nlohmann::json& results);

/// Number of frames implied by the largest frame index (0 when empty).
std::size_t frame_count(const std::vector<RawDetectionFrame>& frames);

}  // namespace choreoseg::skeleton
