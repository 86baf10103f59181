#include "choreoseg/pipeline/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "choreoseg/error.hpp"
#include "choreoseg/rng.hpp"

namespace choreoseg::pipeline {

namespace fs = std::filesystem;

std::string to_string(Category c) { return c == Category::Basic ? "basic" : "advanced"; }

Category parse_category(const std::string& s) {
  if (s == "basic") return Category::Basic;
  if (s == "advanced") return Category::Advanced;
  throw ParseError("unknown category \"" + s + "\"");
}

const DatasetEntry& DatasetIndex::find(const std::string& video_id) const {
  for (const auto& e : entries) {
    if (e.video_id == video_id) return e;
  }
  throw ConfigError("video " + video_id + " not in index");
}

void DatasetIndex::validate_ids() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.video_id.empty()) throw ConfigError("index entry with empty video_id");
    if (!seen.insert(e.video_id).second) throw ConfigError("duplicate video_id " + e.video_id);
  }
}

void DatasetIndex::require_files() const {
  for (const auto& e : entries) {
    for (const fs::path* p : {&e.bones, &e.spectrogram, &e.annotations}) {
      if (p->empty() || !fs::exists(*p)) {
        throw ConfigError("video " + e.video_id + ": missing file " +
                          (p->empty() ? std::string("(not set)") : p->string()) +
                          "; run `features` first");
      }
    }
  }
}

DatasetIndex DatasetIndex::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open index " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  auto resolve = [&base](const nlohmann::json& v, const char* key) -> fs::path {
    if (!v.contains(key) || v[key].is_null()) return {};
    const fs::path p = v[key].get<std::string>();
    if (p.empty() || p.is_absolute()) return p;
    return base / p;
  };
  DatasetIndex index;
  try {
    for (const auto& v : j.at("videos")) {
      DatasetEntry e;
      e.meta = labels::VideoMeta::from_json(v.at("meta"));
      e.video_id = v.value("video_id", e.meta.video_id);
      e.category = parse_category(v.value("category", std::string("basic")));
      e.keypoints = resolve(v, "keypoints");
      e.audio = resolve(v, "audio");
      e.bones = resolve(v, "bones");
      e.spectrogram = resolve(v, "spectrogram");
      e.annotations = resolve(v, "annotations");
      index.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  index.validate_ids();
  return index;
}

void DatasetIndex::save(const fs::path& path) const {
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  auto rel = [&base](const fs::path& p) -> std::string {
    if (p.empty()) return {};
    return p.lexically_proximate(base).generic_string();
  };
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& e : entries) {
    videos.push_back({{"video_id", e.video_id},
                      {"category", to_string(e.category)},
                      {"keypoints", rel(e.keypoints)},
                      {"audio", rel(e.audio)},
                      {"bones", rel(e.bones)},
                      {"spectrogram", rel(e.spectrogram)},
                      {"annotations", rel(e.annotations)},
                      {"meta", e.meta.to_json()}});
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write index " + path.string());
  out << nlohmann::json{{"videos", videos}}.dump(2) << '\n';
}

nlohmann::json Division::to_json() const {
  return {{"train", train}, {"val", val}, {"test", test}};
}

Division Division::from_json(const nlohmann::json& j) {
  try {
    return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("division: ") + e.what());
  }
}

std::vector<Division> split_dataset(const DatasetIndex& index, std::uint64_t seed,
                                    std::size_t count) {
  index.validate_ids();
  std::vector<std::string> groups[2];
  for (const auto& e : index.entries) groups[e.category == Category::Basic ? 0 : 1].push_back(e.video_id);

  std::vector<Division> out;
  for (std::size_t k = 0; k < count; ++k) {
    Rng rng(derive_seed(seed, k));
    Division d;
    for (auto ids : groups) {
      for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.index(i)]);
      const auto held = static_cast<std::size_t>(std::llround(double(ids.size()) / 5.0));
      d.val.insert(d.val.end(), ids.begin(), ids.begin() + held);
      d.test.insert(d.test.end(), ids.begin() + held, ids.begin() + 2 * held);
      d.train.insert(d.train.end(), ids.begin() + 2 * held, ids.end());
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace choreoseg::pipeline
