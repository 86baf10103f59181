#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "choreoseg/labels.hpp"
#include "choreoseg/segnet.hpp"

namespace httplib {
class Server;
}

namespace choreoseg::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "choreoseg-data";
  /// Empty: start without a model (segment requests answer 503).
  std::filesystem::path model_path;
  std::string cors_origin = "*";

  /// Overrides from CHOREOSEG_ADDR ("host:port"), CHOREOSEG_MODEL and
  /// CHOREOSEG_DATA when set.
  void apply_env();
  /// Parses "host:port", ":port" or "port"; throws ConfigError.
  void set_address(const std::string& addr);
};

/// Transport-independent result of one API call.
struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Registered videos with their on-disk artifacts. Every video lives in
/// <data>/videos/<id>/ as meta.json, keypoints.jsonl, audio.wav,
/// features.bones, features.spec and annotations.json.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const ServiceConfig& config() const { return cfg_; }
  bool has_model() const;
  /// Replaces the model and drops cached probability curves.
  void set_model(std::optional<segnet::SegNet> model);

  // API handlers. Bodies are JSON unless noted.
  Response register_video(const std::string& meta_json, const std::string& keypoints_jsonl,
                          const std::string& wav_bytes);
  Response list_videos() const;
  Response segment(const std::string& id, const std::string& body);
  Response candidates(const std::string& id) const;
  Response add_annotation(const std::string& id, const std::string& body);
  Response groundtruth(const std::string& id) const;
  /// CSV "frame,probability".
  Response probability(const std::string& id);

  /// Routes and CORS headers on an httplib server owned by the service.
  httplib::Server& http();
  /// Binds cfg.host:cfg.port (port 0 picks a free one) and returns the bound
  /// port, or -1 on failure.
  int bind();
  /// Serves until stop(); call after bind().
  bool listen_after_bind();
  void stop();

 private:
  struct Record {
    labels::VideoMeta meta;
    std::filesystem::path dir;
    std::mutex mutex;  // serializes writes and inference for this video
    std::optional<std::vector<double>> probability;
  };

  void load_existing();
  std::shared_ptr<Record> find(const std::string& id) const;
  /// Cached p(t), computed on first use; the record mutex must be held.
  const std::vector<double>& curve(Record& rec, const segnet::SegNet& model);
  std::shared_ptr<const segnet::SegNet> model() const;
  void install_routes();

  ServiceConfig cfg_;
  mutable std::shared_mutex records_mutex_;
  std::map<std::string, std::shared_ptr<Record>> records_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const segnet::SegNet> model_;
  std::unique_ptr<httplib::Server> server_;
};

/// True for ids made of [A-Za-z0-9_.-] that do not start with '.'.
bool valid_video_id(const std::string& id);

}  // namespace choreoseg::service
