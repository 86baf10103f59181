#include "choreoseg/service.hpp"

#include <httplib.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "choreoseg/audio.hpp"
#include "choreoseg/error.hpp"
#include "choreoseg/keypoint_io.hpp"
#include "choreoseg/nn/checkpoint.hpp"
#include "choreoseg/pipeline/features.hpp"
#include "choreoseg/pipeline/peaks.hpp"

namespace choreoseg::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMetaFile = "meta.json";
constexpr const char* kKeypointsFile = "keypoints.jsonl";
constexpr const char* kAudioFile = "audio.wav";
constexpr const char* kBonesFile = "features.bones";
constexpr const char* kSpectrogramFile = "features.spec";
constexpr const char* kAnnotationsFile = "annotations.json";

Response json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

Response error_response(int status, const std::string& message) {
  return json_response(status, json{{"error", message}});
}

/// Writes via a temporary sibling and rename so readers never see a torn file.
void write_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

labels::AnnotationSet load_annotations(const fs::path& dir, const labels::VideoMeta& meta) {
  const fs::path path = dir / kAnnotationsFile;
  labels::AnnotationSet set;
  if (fs::exists(path)) set = labels::read_annotations(path);
  set.meta = meta;
  return set;
}

}  // namespace

bool valid_video_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id.front() == '.') return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

void ServiceConfig::set_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  const std::string port_text = colon == std::string::npos ? addr : addr.substr(colon + 1);
  int value = -1;
  const auto res = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
  if (res.ec != std::errc{} || res.ptr != port_text.data() + port_text.size() || value < 0 ||
      value > 65535) {
    throw ConfigError("invalid listen address \"" + addr + "\"; expected host:port");
  }
  if (colon != std::string::npos && colon > 0) host = addr.substr(0, colon);
  port = value;
}

void ServiceConfig::apply_env() {
  if (const char* v = std::getenv("CHOREOSEG_ADDR"); v != nullptr && *v != '\0') set_address(v);
  if (const char* v = std::getenv("CHOREOSEG_MODEL"); v != nullptr && *v != '\0') model_path = v;
  if (const char* v = std::getenv("CHOREOSEG_DATA"); v != nullptr && *v != '\0') data_dir = v;
}

Service::Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  if (!cfg_.model_path.empty()) {
    set_model(segnet::SegNet::from_checkpoint(nn::read_checkpoint(cfg_.model_path)));
  }
  fs::create_directories(cfg_.data_dir / "videos");
  load_existing();
}

Service::~Service() { stop(); }

bool Service::has_model() const { return model() != nullptr; }

std::shared_ptr<const segnet::SegNet> Service::model() const {
  std::lock_guard lock(model_mutex_);
  return model_;
}

void Service::set_model(std::optional<segnet::SegNet> m) {
  std::shared_ptr<const segnet::SegNet> next;
  if (m) next = std::make_shared<const segnet::SegNet>(std::move(*m));
  {
    std::lock_guard lock(model_mutex_);
    model_ = std::move(next);
  }
  std::shared_lock lock(records_mutex_);
  for (auto& [id, rec] : records_) {
    std::lock_guard rec_lock(rec->mutex);
    rec->probability.reset();
  }
}

void Service::load_existing() {
  std::unique_lock lock(records_mutex_);
  for (const auto& entry : fs::directory_iterator(cfg_.data_dir / "videos")) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || !valid_video_id(name)) continue;
    try {
      std::ifstream in(entry.path() / kMetaFile);
      if (!in) continue;
      auto rec = std::make_shared<Record>();
      rec->meta = labels::VideoMeta::from_json(json::parse(in));
      rec->dir = entry.path();
      if (rec->meta.video_id != name) continue;
      records_[name] = std::move(rec);
    } catch (const std::exception& e) {
      std::cerr << "skipping stored video " << name << ": " << e.what() << '\n';
    }
  }
}

std::shared_ptr<Service::Record> Service::find(const std::string& id) const {
  std::shared_lock lock(records_mutex_);
  const auto it = records_.find(id);
  return it == records_.end() ? nullptr : it->second;
}

Response Service::register_video(const std::string& meta_json, const std::string& keypoints_jsonl,
                                 const std::string& wav_bytes) {
  labels::VideoMeta meta;
  bool has_onset = false;
  try {
    const json j = json::parse(meta_json);
    meta = labels::VideoMeta::from_json(j);
    has_onset = j.contains("c0_seconds");
  } catch (const json::exception& e) {
    return error_response(400, std::string("meta: ") + e.what());
  } catch (const Error& e) {
    return error_response(400, std::string("meta: ") + e.what());
  }
  if (!valid_video_id(meta.video_id)) {
    return error_response(400, "video_id may contain only letters, digits, '_', '-' and '.'");
  }
  if (find(meta.video_id) != nullptr) return error_response(409, "video " + meta.video_id + " already exists");

  pipeline::VideoFeatures features;
  try {
    std::istringstream kp(keypoints_jsonl);
    const auto detections = skeleton::read_keypoints_jsonl(kp);
    const std::size_t seen = skeleton::frame_count(detections);
    if (seen == 0) return error_response(400, "keypoints: no frames");
    if (meta.total_frames == 0) meta.total_frames = seen;
    if (seen > meta.total_frames) {
      return error_response(400, "keypoints: frame index beyond total_frames");
    }
    std::istringstream wav(wav_bytes);
    const auto wave = audio::read_wav(wav);
    if (!has_onset) meta.onset_c0 = audio::detect_onset(wave);
    features = pipeline::extract_features(detections, wave, meta.fps, meta.total_frames);
  } catch (const Error& e) {
    return error_response(400, e.what());
  }

  std::unique_lock lock(records_mutex_);
  if (records_.count(meta.video_id) != 0) {
    return error_response(409, "video " + meta.video_id + " already exists");
  }
  const fs::path final_dir = cfg_.data_dir / "videos" / meta.video_id;
  const fs::path tmp_dir = cfg_.data_dir / "videos" / ("." + meta.video_id + ".partial");
  fs::remove_all(tmp_dir);
  fs::create_directories(tmp_dir);
  write_atomic(tmp_dir / kKeypointsFile, keypoints_jsonl);
  write_atomic(tmp_dir / kAudioFile, wav_bytes);
  pipeline::save_features(features, tmp_dir / kBonesFile, tmp_dir / kSpectrogramFile);
  labels::AnnotationSet empty;
  empty.meta = meta;
  write_atomic(tmp_dir / kAnnotationsFile, empty.to_json().dump(2));
  write_atomic(tmp_dir / kMetaFile, meta.to_json().dump(2));
  if (fs::exists(final_dir)) fs::remove_all(final_dir);  // leftover without meta
  fs::rename(tmp_dir, final_dir);

  auto rec = std::make_shared<Record>();
  rec->meta = meta;
  rec->dir = final_dir;
  records_[meta.video_id] = rec;
  return json_response(201, json{{"video_id", meta.video_id},
                                 {"total_frames", meta.total_frames},
                                 {"c0_seconds", meta.onset_c0}});
}

Response Service::list_videos() const {
  json out = json::array();
  std::shared_lock lock(records_mutex_);
  for (const auto& [id, rec] : records_) out.push_back(rec->meta.to_json());
  return json_response(200, json{{"videos", out}});
}

const std::vector<double>& Service::curve(Record& rec, const segnet::SegNet& m) {
  if (!rec.probability) {
    const auto f = pipeline::load_features(rec.dir / kBonesFile, rec.dir / kSpectrogramFile);
    rec.probability = m.predict(segnet::make_input(f.bones, f.spectrogram, rec.meta.fps));
  }
  return *rec.probability;
}

Response Service::segment(const std::string& id, const std::string& body) {
  const auto rec = find(id);
  if (rec == nullptr) return error_response(404, "unknown video " + id);
  double h = pipeline::kAppThreshold;
  std::size_t d = pipeline::kAppMinDistance;
  if (!body.empty()) {
    json j;
    try {
      j = json::parse(body);
    } catch (const json::exception& e) {
      return error_response(400, std::string("body: ") + e.what());
    }
    if (!j.is_object()) return error_response(400, "body must be a JSON object");
    if (j.contains("h")) {
      if (!j["h"].is_number() || !(j["h"].get<double>() >= 0.0 && j["h"].get<double>() <= 1.0)) {
        return error_response(400, "h must be a number in [0, 1]");
      }
      h = j["h"].get<double>();
    }
    if (j.contains("d")) {
      if (!j["d"].is_number_integer() || j["d"].get<long long>() < 0) {
        return error_response(400, "d must be a non-negative integer");
      }
      d = j["d"].get<std::size_t>();
    }
  }
  std::lock_guard lock(rec->mutex);
  const auto m = model();
  if (m == nullptr) return error_response(503, "no model loaded");
  const auto& p = curve(*rec, *m);
  auto result = pipeline::segment_curve(p, h, pipeline::kDefaultWindow, d);
  json out = result.to_json();
  out["video_id"] = id;
  return json_response(200, out);
}

Response Service::candidates(const std::string& id) const {
  const auto rec = find(id);
  if (rec == nullptr) return error_response(404, "unknown video " + id);
  const auto seconds = labels::candidates(rec->meta);
  const auto frames = labels::candidate_frames(rec->meta);
  json list = json::array();
  for (std::size_t i = 0; i < seconds.size(); ++i) {
    list.push_back({{"index", i},
                    {"seconds", seconds[i]},
                    {"frame", frames[i]},
                    {"kind", i % 2 == 0 ? "beat" : "half_beat"}});
  }
  return json_response(200, json{{"video_id", id}, {"candidates", list}});
}

Response Service::add_annotation(const std::string& id, const std::string& body) {
  const auto rec = find(id);
  if (rec == nullptr) return error_response(404, "unknown video " + id);
  labels::Annotator ann;
  try {
    const json j = json::parse(body);
    if (!j.is_object()) return error_response(400, "body must be a JSON object");
    const json& a = j.at("annotator");
    ann.id = a.is_string() ? a.get<std::string>() : a.dump();
    for (const auto& p : j.at("points_frames")) {
      if (!p.is_number_integer() || p.get<long long>() < 0) {
        return error_response(400, "points_frames must hold non-negative integers");
      }
      ann.points_frames.push_back(p.get<std::size_t>());
    }
  } catch (const json::exception& e) {
    return error_response(400, std::string("body: ") + e.what());
  }
  if (ann.id.empty()) return error_response(400, "annotator must be non-empty");
  try {
    labels::validate_points(ann.points_frames, rec->meta.total_frames);
  } catch (const ConfigError& e) {
    return error_response(400, e.what());
  }
  std::lock_guard lock(rec->mutex);
  auto set = load_annotations(rec->dir, rec->meta);
  bool replaced = false;
  for (auto& existing : set.annotators) {
    if (existing.id == ann.id) {
      existing = ann;
      replaced = true;
    }
  }
  if (!replaced) set.annotators.push_back(ann);
  write_atomic(rec->dir / kAnnotationsFile, set.to_json().dump(2));
  return json_response(201, json{{"video_id", id},
                                 {"annotator", ann.id},
                                 {"annotators", set.annotators.size()}});
}

Response Service::groundtruth(const std::string& id) const {
  const auto rec = find(id);
  if (rec == nullptr) return error_response(404, "unknown video " + id);
  std::lock_guard lock(rec->mutex);
  const auto set = load_annotations(rec->dir, rec->meta);
  if (set.annotators.empty()) return error_response(404, "video " + id + " has no annotations");
  const auto label = set.label();
  return json_response(200, json{{"video_id", id},
                                 {"annotators", set.annotators.size()},
                                 {"sigma_frames", label.sigma_frames},
                                 {"values", label.values}});
}

Response Service::probability(const std::string& id) {
  const auto rec = find(id);
  if (rec == nullptr) return error_response(404, "unknown video " + id);
  std::lock_guard lock(rec->mutex);
  const auto m = model();
  if (m == nullptr) return error_response(503, "no model loaded");
  const auto& p = curve(*rec, *m);
  std::ostringstream csv;
  labels::write_label_csv(csv, p, "probability");
  return {200, "text/csv", csv.str()};
}

// --- HTTP ------------------------------------------------------------------

httplib::Server& Service::http() {
  if (!server_) {
    server_ = std::make_unique<httplib::Server>();
    install_routes();
  }
  return *server_;
}

void Service::install_routes() {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", cfg_.cors_origin},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type"}});
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  s.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_response(500, what));
  });
  s.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Post("/api/videos", [this, send](const httplib::Request& req, httplib::Response& res) {
    if (!req.is_multipart_form_data()) {
      return send(res, error_response(400, "expected multipart/form-data with meta, keypoints and audio"));
    }
    for (const char* field : {"meta", "keypoints", "audio"}) {
      if (!req.has_file(field)) return send(res, error_response(400, std::string("missing form field ") + field));
    }
    send(res, register_video(req.get_file_value("meta").content, req.get_file_value("keypoints").content,
                             req.get_file_value("audio").content));
  });
  s.Get("/api/videos", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, list_videos());
  });
  s.Post(R"(/api/videos/([^/]+)/segment)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, segment(req.matches[1], req.body));
  });
  s.Get(R"(/api/videos/([^/]+)/candidates)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, candidates(req.matches[1]));
  });
  s.Post(R"(/api/videos/([^/]+)/annotations)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, add_annotation(req.matches[1], req.body));
  });
  s.Get(R"(/api/videos/([^/]+)/groundtruth)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, groundtruth(req.matches[1]));
  });
  s.Get(R"(/api/videos/([^/]+)/probability)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, probability(req.matches[1]));
  });
}

int Service::bind() {
  auto& s = http();
  if (cfg_.port == 0) return s.bind_to_any_port(cfg_.host);
  return s.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
}

bool Service::listen_after_bind() { return http().listen_after_bind(); }

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace choreoseg::service
