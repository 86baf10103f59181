#include <doctest.h>
#include <httplib.h>

#include <future>
#include <sstream>
#include <thread>

#include "choreoseg/labels.hpp"
#include "choreoseg/nn/checkpoint.hpp"
#include "choreoseg/segnet.hpp"
#include "choreoseg/service.hpp"
#include "json.hpp"
#include "service_fixture.hpp"

using namespace choreoseg;
using namespace choreoseg::service;
using nlohmann::json;

namespace {

segnet::SegNet small_model(std::uint64_t seed = 1) {
  segnet::ModelConfig cfg;
  cfg.layers = 4;
  return segnet::SegNet(cfg, seed);
}

ServiceConfig config_for(const std::filesystem::path& dir) {
  ServiceConfig cfg;
  cfg.data_dir = dir;
  cfg.port = 0;
  return cfg;
}

std::size_t peak_count(const Response& r) { return json::parse(r.body).at("peaks").size(); }

}  // namespace

TEST_CASE("registration validates uploads") {
  testing::ScratchDir dir("choreoseg_service_register");
  Service svc(config_for(dir.path));
  const auto up = testing::synth_upload("clip_a", 0, 300);

  const auto ok = svc.register_video(up.meta, up.keypoints, up.audio);
  CHECK(ok.status == 201);
  const json body = json::parse(ok.body);
  CHECK(body.at("video_id") == "clip_a");
  CHECK(body.at("total_frames") == 300);
  CHECK(body.at("c0_seconds").get<double>() == doctest::Approx(up.video.meta.onset_c0).epsilon(1e-3));
  CHECK(svc.register_video(up.meta, up.keypoints, up.audio).status == 409);

  auto short_kp = json::parse(up.keypoints.substr(0, up.keypoints.find('\n')));
  short_kp["people"][0]["kp"].erase(0);
  const auto meta_b = json{{"video_id", "clip_b"}, {"fps", 60}, {"tempo_bpm", 120}, {"n_beats", 16}}.dump();
  const auto bad_kp = svc.register_video(meta_b, short_kp.dump() + "\n", up.audio);
  CHECK(bad_kp.status == 400);
  CHECK(json::parse(bad_kp.body).contains("error"));
  CHECK(svc.register_video(meta_b, up.keypoints, "RIFFnope").status == 400);
  CHECK(svc.register_video("{", up.keypoints, up.audio).status == 400);
  const auto bad_id = json{{"video_id", "../x"}, {"fps", 60}, {"tempo_bpm", 120}, {"n_beats", 16}}.dump();
  CHECK(svc.register_video(bad_id, up.keypoints, up.audio).status == 400);
  const auto too_short = json{{"video_id", "clip_c"}, {"fps", 60}, {"tempo_bpm", 120},
                              {"n_beats", 16}, {"total_frames", 10}}.dump();
  CHECK(svc.register_video(too_short, up.keypoints, up.audio).status == 400);

  const json list = json::parse(svc.list_videos().body);
  REQUIRE(list.at("videos").size() == 1);
  CHECK(list["videos"][0]["video_id"] == "clip_a");
  CHECK(std::filesystem::exists(dir.path / "videos" / "clip_a" / "features.bones"));
}

TEST_CASE("segmentation requests") {
  testing::ScratchDir dir("choreoseg_service_segment");
  Service svc(config_for(dir.path));
  const auto up = testing::synth_upload("v1", 1, 400);
  REQUIRE(svc.register_video(up.meta, up.keypoints, up.audio).status == 201);

  CHECK(svc.segment("v1", "").status == 503);
  CHECK(svc.probability("v1").status == 503);
  svc.set_model(small_model());
  CHECK(svc.has_model());
  CHECK(svc.segment("nope", "").status == 404);

  const auto first = svc.segment("v1", "");
  REQUIRE(first.status == 200);
  const json j = json::parse(first.body);
  CHECK(j.at("threshold") == 0.25);
  CHECK(j.at("min_distance") == 60);
  CHECK(j.at("window") == 20);
  CHECK(j.at("probability").size() == 400);
  CHECK(svc.segment("v1", "").body == first.body);
  CHECK(svc.segment("v1", R"({"h":0.25,"d":60})").body == first.body);

  std::size_t previous = 0;
  for (int step = 100; step >= 0; --step) {
    const double h = step / 100.0;
    const auto r = svc.segment("v1", json{{"h", h}, {"d", 0}}.dump());
    REQUIRE(r.status == 200);
    const std::size_t n = peak_count(r);
    CHECK(n >= previous);
    previous = n;
  }
  CHECK(peak_count(svc.segment("v1", R"({"h":0,"d":1000})")) <= 1);

  CHECK(svc.segment("v1", R"({"h":1.5})").status == 400);
  CHECK(svc.segment("v1", R"({"d":-1})").status == 400);
  CHECK(svc.segment("v1", R"({"d":2.5})").status == 400);
  CHECK(svc.segment("v1", R"([1])").status == 400);
  CHECK(svc.segment("v1", "{").status == 400);

  const auto csv = svc.probability("v1");
  CHECK(csv.content_type == "text/csv");
  CHECK(csv.body.rfind("frame,probability\n", 0) == 0);
  CHECK(std::count(csv.body.begin(), csv.body.end(), '\n') == 401);

  // A different model changes the curve.
  svc.set_model(small_model(2));
  CHECK(svc.segment("v1", "").body != first.body);
  svc.set_model(std::nullopt);
  CHECK(svc.segment("v1", "").status == 503);
}

TEST_CASE("candidates, annotations and ground truth") {
  testing::ScratchDir dir("choreoseg_service_annotate");
  Service svc(config_for(dir.path));
  const auto up = testing::synth_upload("basic", 2, 600);
  REQUIRE(svc.register_video(up.meta, up.keypoints, up.audio).status == 201);

  const json cand = json::parse(svc.candidates("basic").body);
  REQUIRE(cand.at("candidates").size() == 32);
  CHECK(cand["candidates"][0]["kind"] == "beat");
  CHECK(cand["candidates"][1]["kind"] == "half_beat");
  CHECK(svc.candidates("missing").status == 404);

  CHECK(svc.groundtruth("basic").status == 404);
  const std::vector<std::vector<std::size_t>> points{{100, 250, 400}, {102, 251}, {99, 400, 520}};
  for (std::size_t a = 0; a < points.size(); ++a) {
    const auto r = svc.add_annotation(
        "basic", json{{"annotator", "ann" + std::to_string(a)}, {"points_frames", points[a]}}.dump());
    CHECK(r.status == 201);
  }
  const json gt = json::parse(svc.groundtruth("basic").body);
  CHECK(gt.at("annotators") == 3);
  CHECK(gt.at("sigma_frames").get<double>() == doctest::Approx(10.0));
  const auto expected = labels::ground_truth(points, 10.0, 600);
  CHECK(gt.at("values").get<std::vector<double>>() == expected.values);

  CHECK(svc.add_annotation("basic", R"({"annotator":"x","points_frames":[5,5]})").status == 400);
  CHECK(svc.add_annotation("basic", R"({"annotator":"x","points_frames":[9,3]})").status == 400);
  CHECK(svc.add_annotation("basic", R"({"annotator":"x","points_frames":[600]})").status == 400);
  CHECK(svc.add_annotation("basic", R"({"annotator":"x","points_frames":[-2]})").status == 400);
  CHECK(svc.add_annotation("basic", R"({"points_frames":[1]})").status == 400);
  CHECK(svc.add_annotation("missing", R"({"annotator":"x","points_frames":[1]})").status == 404);

  // Same annotator id replaces the earlier submission.
  CHECK(svc.add_annotation("basic", R"({"annotator":"ann1","points_frames":[300]})").status == 201);
  CHECK(json::parse(svc.groundtruth("basic").body).at("annotators") == 3);
}

TEST_CASE("state survives a restart") {
  testing::ScratchDir dir("choreoseg_service_restart");
  const auto model_path = dir.path / "model.dseg";
  nn::write_checkpoint(model_path, small_model(3).to_checkpoint());
  auto cfg = config_for(dir.path / "data");
  cfg.model_path = model_path;

  std::string list_before, gt_before, seg_before;
  {
    Service svc(cfg);
    for (int i = 0; i < 2; ++i) {
      const auto up = testing::synth_upload("r" + std::to_string(i), std::size_t(i), 300);
      REQUIRE(svc.register_video(up.meta, up.keypoints, up.audio).status == 201);
    }
    REQUIRE(svc.add_annotation("r1", R"({"annotator":"a","points_frames":[30,150]})").status == 201);
    list_before = svc.list_videos().body;
    gt_before = svc.groundtruth("r1").body;
    seg_before = svc.segment("r0", R"({"h":0.1,"d":10})").body;
  }
  Service again(cfg);
  CHECK(again.has_model());
  CHECK(again.list_videos().body == list_before);
  CHECK(again.groundtruth("r1").body == gt_before);
  CHECK(again.segment("r0", R"({"h":0.1,"d":10})").body == seg_before);
  const auto up = testing::synth_upload("r0", 0, 300);
  CHECK(again.register_video(up.meta, up.keypoints, up.audio).status == 409);
}

TEST_CASE("address parsing") {
  ServiceConfig cfg;
  cfg.set_address("0.0.0.0:9000");
  CHECK(cfg.host == "0.0.0.0");
  CHECK(cfg.port == 9000);
  cfg.set_address(":7000");
  CHECK(cfg.host == "0.0.0.0");
  CHECK(cfg.port == 7000);
  cfg.set_address("8123");
  CHECK(cfg.port == 8123);
  CHECK_THROWS(cfg.set_address("host:port"));
  CHECK_THROWS(cfg.set_address("host:70000"));
  CHECK(valid_video_id("a.b-c_1"));
  CHECK_FALSE(valid_video_id(".hidden"));
  CHECK_FALSE(valid_video_id("a/b"));
  CHECK_FALSE(valid_video_id(""));
}

TEST_CASE("HTTP API end to end with parallel clients") {
  testing::ScratchDir dir("choreoseg_service_http");
  Service svc(config_for(dir.path));
  svc.set_model(small_model(4));
  const int port = svc.bind();
  REQUIRE(port > 0);
  std::thread server([&] { svc.listen_after_bind(); });
  svc.http().wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const std::size_t n_videos = 4;
  for (std::size_t i = 0; i < n_videos; ++i) {
    const auto up = testing::synth_upload("h" + std::to_string(i), i, 300);
    httplib::MultipartFormDataItems items{{"meta", up.meta, "meta.json", "application/json"},
                                          {"keypoints", up.keypoints, "kp.jsonl", "application/jsonl"},
                                          {"audio", up.audio, "audio.wav", "audio/wav"}};
    const auto res = client.Post("/api/videos", items);
    REQUIRE(res);
    CHECK(res->status == 201);
  }
  const auto missing_field = client.Post(
      "/api/videos", httplib::MultipartFormDataItems{{"meta", "{}", "", "application/json"}});
  REQUIRE(missing_field);
  CHECK(missing_field->status == 400);
  const auto not_multipart = client.Post("/api/videos", "{}", "application/json");
  REQUIRE(not_multipart);
  CHECK(not_multipart->status == 400);

  const auto list = client.Get("/api/videos");
  REQUIRE(list);
  CHECK(json::parse(list->body).at("videos").size() == n_videos);
  CHECK(list->get_header_value("Access-Control-Allow-Origin") == "*");
  const auto preflight = client.Options("/api/videos/h0/segment");
  REQUIRE(preflight);
  CHECK(preflight->status == 204);

  // Reference bodies from the in-process handlers, compared against
  // concurrent HTTP requests.
  std::vector<std::string> expected;
  for (std::size_t i = 0; i < n_videos; ++i) expected.push_back(svc.segment("h" + std::to_string(i), R"({"h":0.2})").body);
  std::vector<std::future<bool>> jobs;
  for (std::size_t k = 0; k < 16; ++k) {
    jobs.push_back(std::async(std::launch::async, [&, k] {
      httplib::Client c("127.0.0.1", port);
      const std::size_t i = k % n_videos;
      const auto r = c.Post("/api/videos/h" + std::to_string(i) + "/segment", R"({"h":0.2})", "application/json");
      return r && r->status == 200 && r->body == expected[i];
    }));
  }
  for (auto& j : jobs) CHECK(j.get());

  const auto seg404 = client.Post("/api/videos/zzz/segment", "", "application/json");
  REQUIRE(seg404);
  CHECK(seg404->status == 404);
  const auto cand = client.Get("/api/videos/h0/candidates");
  REQUIRE(cand);
  CHECK(json::parse(cand->body).at("candidates").size() == 32);
  const auto ann = client.Post("/api/videos/h0/annotations", R"({"annotator":"u","points_frames":[10,90]})",
                               "application/json");
  REQUIRE(ann);
  CHECK(ann->status == 201);
  const auto gt = client.Get("/api/videos/h0/groundtruth");
  REQUIRE(gt);
  CHECK(gt->status == 200);
  const auto csv = client.Get("/api/videos/h0/probability");
  REQUIRE(csv);
  CHECK(csv->get_header_value("Content-Type") == "text/csv");

  svc.stop();
  server.join();
}
