#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "choreoseg/error.hpp"
#include "choreoseg/pipeline/dataset.hpp"
#include "choreoseg/pipeline/features.hpp"
#include "choreoseg/pipeline/metrics.hpp"
#include "choreoseg/pipeline/peaks.hpp"
#include "choreoseg/pipeline/synth.hpp"
#include "choreoseg/pipeline/train.hpp"
#include "choreoseg/rng.hpp"
#include "oracles.hpp"

using namespace choreoseg;
using namespace choreoseg::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

DatasetIndex mock_index(std::size_t basic, std::size_t advanced) {
  DatasetIndex idx;
  for (std::size_t i = 0; i < basic + advanced; ++i) {
    DatasetEntry e;
    e.video_id = "v" + std::to_string(i);
    e.category = i < basic ? Category::Basic : Category::Advanced;
    idx.entries.push_back(e);
  }
  return idx;
}

}  // namespace

// --- peaks -------------------------------------------------------------------

TEST_CASE("peak picking matches the window-scan oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto p = testing::random_curve(rng, rng.index(600));
    const double h = rng.uniform(-0.1, 0.9);
    const std::size_t w = rng.index(50);
    CHECK(pick_peaks(p, h, w) == testing::brute_force_peaks(p, h, w));
  }
}

TEST_CASE("peak picking examples") {
  CHECK(pick_peaks(std::vector<double>{0.1, 0.4, 0.9, 0.4, 0.1}, 0.3, 2) == std::vector<std::size_t>{2});
  CHECK(pick_peaks(std::vector<double>(50, 0.0), 0.3, 20).empty());
  CHECK(enforce_min_distance(std::vector<std::size_t>{10, 50, 130}, 60) == std::vector<std::size_t>{10, 130});
}

TEST_CASE("plateaus yield their first frame") {
  const std::vector<double> p{0.1, 0.8, 0.8, 0.8, 0.1, 0.1, 0.1, 0.1, 0.9, 0.2};
  CHECK(pick_peaks(p, 0.3, 4) == std::vector<std::size_t>{1, 8});
  // A later, equal value outside the left window is a new peak.
  const std::vector<double> q{0.8, 0.1, 0.1, 0.1, 0.8};
  CHECK(pick_peaks(q, 0.3, 8) == std::vector<std::size_t>{0});
  CHECK(pick_peaks(q, 0.3, 6) == std::vector<std::size_t>{0, 4});
}

TEST_CASE("threshold is strict") {
  const std::vector<double> p{0.0, 0.3, 0.0, 0.31, 0.0};
  CHECK(pick_peaks(p, 0.3, 2) == std::vector<std::size_t>{3});
  CHECK(pick_peaks(std::vector<double>{}, 0.3, 20).empty());
  CHECK_THROWS_AS(pick_peaks(p, std::numeric_limits<double>::quiet_NaN(), 2), ConfigError);
}

TEST_CASE("peaks are invariant under strictly increasing transforms") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = testing::random_curve(rng, 300);
    const double h = rng.uniform(0.0, 0.8);
    std::vector<double> q(p.size());
    std::transform(p.begin(), p.end(), q.begin(), [](double x) { return 3.0 * x - 1.0; });
    CHECK(pick_peaks(p, h, 20) == pick_peaks(q, 3.0 * h - 1.0, 20));
  }
}

TEST_CASE("raising the threshold only removes peaks") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = testing::random_curve(rng, 400);
    const auto lo = pick_peaks(p, 0.2, 20);
    const auto hi = pick_peaks(p, 0.6, 20);
    CHECK(std::includes(lo.begin(), lo.end(), hi.begin(), hi.end()));
    for (std::size_t i = 1; i < lo.size(); ++i) CHECK(lo[i] - lo[i - 1] > 10);
  }
}

TEST_CASE("min-distance thinning") {
  const std::vector<std::size_t> peaks{0, 30, 59, 60, 100, 125, 200};
  CHECK(enforce_min_distance(peaks, 60) == std::vector<std::size_t>{0, 60, 125, 200});
  CHECK(enforce_min_distance(peaks, 0) == peaks);
  CHECK(enforce_min_distance(std::vector<std::size_t>{}, 60).empty());
  CHECK_THROWS_AS(enforce_min_distance(std::vector<std::size_t>{5, 5}, 1), ConfigError);
  CHECK_THROWS_AS(enforce_min_distance(std::vector<std::size_t>{5, 2}, 1), ConfigError);

  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const auto pts = testing::random_points(rng, 2000, 60);
    const std::size_t d = rng.index(120);
    const auto kept = enforce_min_distance(pts, d);
    CHECK(kept == testing::brute_force_min_distance(pts, d));
    CHECK(enforce_min_distance(kept, d) == kept);
    for (std::size_t i = 1; i < kept.size(); ++i) CHECK(kept[i] - kept[i - 1] >= d);
    if (!pts.empty()) CHECK(kept.front() == pts.front());
  }
}

TEST_CASE("segment_curve reports its parameters") {
  const std::vector<double> p{0.0, 0.5, 0.0, 0.0, 0.6, 0.0};
  const auto r = segment_curve(p, 0.25, 2, 3);
  CHECK(r.peaks == std::vector<std::size_t>{1, 4});
  const auto j = r.to_json();
  CHECK(j.at("threshold") == 0.25);
  CHECK(j.at("window") == 2);
  CHECK(j.at("min_distance") == 3);
  CHECK(j.at("probability").size() == 6);
  CHECK(segment_curve(p, 0.25, 2, 4).peaks == std::vector<std::size_t>{1});
}

// --- metrics -----------------------------------------------------------------

TEST_CASE("metrics worked example") {
  const std::vector<std::size_t> est{10, 50, 100};
  const std::vector<std::size_t> gt{12, 90, 200};
  const auto m = evaluate(est, gt, 15.0);
  CHECK(m.precision == doctest::Approx(2.0 / 3.0));
  CHECK(m.recall == doctest::Approx(2.0 / 3.0));
  CHECK(m.f_measure == doctest::Approx(2.0 / 3.0));
  // Tolerance is inclusive.
  CHECK(evaluate(std::vector<std::size_t>{0}, std::vector<std::size_t>{15}, 15.0).precision == 1.0);
  CHECK(evaluate(std::vector<std::size_t>{0}, std::vector<std::size_t>{16}, 15.0).precision == 0.0);
}

TEST_CASE("metrics edge cases") {
  const auto one = evaluate(std::vector<std::size_t>{100}, std::vector<std::size_t>{110}, 15.0);
  CHECK(one.precision == 1.0);
  CHECK(one.recall == 1.0);
  CHECK(one.f_measure == 1.0);
  const auto empty_est = evaluate(std::vector<std::size_t>{}, std::vector<std::size_t>{100}, 15.0);
  CHECK(empty_est.precision == 1.0);
  CHECK(empty_est.recall == 0.0);
  CHECK(empty_est.f_measure == 0.0);
  const std::vector<std::size_t> none;
  const std::vector<std::size_t> some{5};
  CHECK(evaluate(none, none, 1.0).f_measure == 1.0);
  const auto no_est = evaluate(none, some, 1.0);
  CHECK(no_est.precision == 1.0);
  CHECK(no_est.recall == 0.0);
  const auto no_gt = evaluate(some, none, 1.0);
  CHECK(no_gt.precision == 0.0);
  CHECK(no_gt.recall == 1.0);
  CHECK(f_measure(0.0, 0.0) == 0.0);
  CHECK_THROWS_AS(evaluate(some, some, -1.0), ConfigError);
}

TEST_CASE("metrics match the quadratic oracle and swap under exchange") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    auto est = testing::random_points(rng, 3000, 30);
    auto gt = testing::random_points(rng, 3000, 30);
    const double tol = rng.uniform(0.0, 40.0);
    std::shuffle(est.begin(), est.end(), std::mt19937(trial));
    const auto m = evaluate(est, gt, tol);
    const auto o = testing::brute_force_metrics(est, gt, tol);
    CHECK(m.precision == o.precision);
    CHECK(m.recall == o.recall);
    CHECK(m.f_measure == doctest::Approx(o.f_measure));
    const auto swapped = evaluate(gt, est, tol);
    CHECK(swapped.precision == m.recall);
    CHECK(swapped.recall == m.precision);
  }
}

// --- split -------------------------------------------------------------------

TEST_CASE("stratified split partitions every division") {
  const auto idx = mock_index(30, 5);
  const auto divs = split_dataset(idx, 11);
  REQUIRE(divs.size() == kDivisionCount);
  std::set<std::string> all;
  for (const auto& e : idx.entries) all.insert(e.video_id);
  for (const auto& d : divs) {
    CHECK(d.val.size() == 6 + 1);
    CHECK(d.test.size() == 6 + 1);
    CHECK(d.train.size() == 35 - 14);
    std::set<std::string> seen;
    for (const auto* part : {&d.train, &d.val, &d.test}) {
      for (const auto& id : *part) CHECK(seen.insert(id).second);
    }
    CHECK(seen == all);
    std::size_t adv_val = 0;
    for (const auto& id : d.val) adv_val += idx.find(id).category == Category::Advanced ? 1 : 0;
    CHECK(adv_val == 1);
  }
  CHECK(divs[0].test != divs[1].test);
  const auto again = split_dataset(idx, 11);
  for (std::size_t k = 0; k < divs.size(); ++k) CHECK(again[k].to_json() == divs[k].to_json());
  CHECK(Division::from_json(divs[3].to_json()).train == divs[3].train);
}

TEST_CASE("split rejects duplicate ids") {
  auto idx = mock_index(3, 0);
  idx.entries[2].video_id = "v0";
  CHECK_THROWS_AS(split_dataset(idx, 0), ConfigError);
  CHECK_THROWS_AS(parse_category("expert"), ParseError);
  CHECK(parse_category("advanced") == Category::Advanced);
}

// --- synthetic data ----------------------------------------------------------

TEST_CASE("synthetic videos carry their planted structure") {
  SynthConfig cfg;
  cfg.seed = 3;
  cfg.frames = 900;
  for (std::size_t i = 0; i < 7; ++i) {
    const auto v = synth_video(cfg, i);
    CHECK(v.detections.size() == 900);
    CHECK(v.meta.total_frames == 900);
    CHECK(v.category == (i == 6 ? Category::Advanced : Category::Basic));
    REQUIRE(!v.boundaries.empty());
    const double beat = v.meta.beat_frames();
    const auto beats = labels::candidate_frames(v.meta);
    for (std::size_t b : v.boundaries) {
      CHECK(std::find(beats.begin(), beats.end(), b) != beats.end());
    }
    for (std::size_t k = 1; k < v.boundaries.size(); ++k) {
      const double gap = double(v.boundaries[k] - v.boundaries[k - 1]) / beat;
      CHECK(gap > 1.9);
      CHECK(gap < 4.1);
    }
    const auto label = v.annotations.label().values;
    for (double x : label) CHECK((x >= 0.0 && x <= 1.0));
    const auto label_peaks = pick_peaks(label, 0.3, 20);
    const double sigma = labels::sigma_frames(v.meta);
    for (std::size_t b : v.boundaries) {
      const bool near = std::any_of(label_peaks.begin(), label_peaks.end(), [&](std::size_t q) {
        return std::abs(double(q) - double(b)) <= sigma;
      });
      CHECK(near);
    }
    REQUIRE(v.annotations.annotators.size() == 3);
    CHECK(v.annotations.annotators[0].points_frames == v.boundaries);
    // Onset from the waveform sits within one frame of the first click.
    CHECK(v.meta.onset_c0 >= 0.3);
    CHECK(v.meta.onset_c0 <= 0.81);
  }
}

TEST_CASE("synthetic generation is deterministic") {
  SynthConfig cfg;
  cfg.frames = 300;
  const auto a = synth_video(cfg, 2), b = synth_video(cfg, 2);
  CHECK(a.wave.samples == b.wave.samples);
  CHECK(a.boundaries == b.boundaries);
  CHECK(a.detections[17].persons[0].keypoints == b.detections[17].persons[0].keypoints);
  cfg.seed = 1;
  CHECK(synth_video(cfg, 2).wave.samples != a.wave.samples);
  cfg.videos = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("features of a synthetic video") {
  SynthConfig cfg;
  cfg.frames = 240;
  const auto v = synth_video(cfg, 0);
  const auto f = extract_features(v.detections, v.wave, 60.0);
  CHECK(f.frames() == 240);
  CHECK(f.spectrogram.scale == audio::SpectrogramScale::Normalized);
  for (std::size_t t = 0; t < 240; t += 37) {
    for (std::size_t b = 0; b < skeleton::kNumBones; ++b) {
      const double x = f.bones[t * 134 + 2 * b], y = f.bones[t * 134 + 2 * b + 1];
      CHECK(std::hypot(x, y) == doctest::Approx(0.5));
    }
  }
  const auto in = f.to_input();
  CHECK(in.frames == 240);
  CHECK(in.slices.shape() == nn::Shape{240, 405});

  TempDir dir("choreoseg_features_test");
  save_features(f, dir.path / "a.bones", dir.path / "a.spec");
  const auto back = load_features(dir.path / "a.bones", dir.path / "a.spec");
  CHECK(back.fps == 60.0);
  REQUIRE(back.bones.size() == f.bones.size());
  for (std::size_t i = 0; i < f.bones.size(); ++i) CHECK(back.bones[i] == double(float(f.bones[i])));
  CHECK(back.spectrogram.frames == f.spectrogram.frames);
}

// --- training ------------------------------------------------------------------

TEST_CASE("training on a tiny synthetic set") {
  TempDir dir("choreoseg_train_test");
  SynthConfig sc;
  sc.videos = 3;
  sc.frames = 360;
  auto idx = write_synth_dataset(sc, dir.path / "data");
  extract_index_features(idx, dir.path / "features");
  idx.save(dir.path / "data" / "index.json");
  const auto reloaded = DatasetIndex::load(dir.path / "data" / "index.json");
  CHECK_NOTHROW(reloaded.require_files());
  const auto videos = load_videos(reloaded, {"synth_000", "synth_001", "synth_002"});
  REQUIRE(videos.size() == 3);
  CHECK(videos[0].label.size() == 360);
  CHECK(videos[0].input.frames == 360);

  segnet::ModelConfig mc;
  mc.layers = 3;
  segnet::SegNet net(mc, 1);
  const std::span<const LoadedVideo> train_set(videos.data(), 2);
  const std::span<const LoadedVideo> val_set(videos.data() + 2, 1);

  TrainConfig none;
  none.max_epochs = 0;
  const auto idle = train(net, train_set, val_set, none);
  CHECK(idle.history.empty());
  CHECK(idle.best_epoch == 0);
  CHECK(idle.model.param("head/weight").value.vec() == net.param("head/weight").value.vec());

  TrainConfig tc;
  tc.max_epochs = 6;
  tc.seed = 2;
  std::size_t calls = 0;
  const auto r = train(net, train_set, val_set, tc, [&](const EpochRecord&) { ++calls; });
  CHECK(calls == r.history.size());
  REQUIRE(r.history.size() == 6);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
  CHECK(r.best_val_loss == doctest::Approx(mean_loss(r.model, val_set)));
  CHECK(r.history_json().at("epochs").size() == 6);

  const auto again = train(net, train_set, val_set, tc);
  CHECK(again.best_val_loss == r.best_val_loss);
  CHECK(again.model.param("visual/weight").value.vec() == r.model.param("visual/weight").value.vec());

  const auto rep = run_eval(r.model, val_set);
  CHECK(rep.videos.size() == 1);
  CHECK(rep.f_measure >= 0.0);
  CHECK(rep.f_measure <= 1.0);
  CHECK(rep.to_json().contains("f_measure"));
}

TEST_CASE("training config validation and JSON") {
  TrainConfig tc;
  tc.patience = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.patience = 4;
  tc.adam.lr = 0.01;
  tc.division = 3;
  const auto back = TrainConfig::from_json(tc.to_json());
  CHECK(back.patience == 4);
  CHECK(back.adam.lr == 0.01);
  CHECK(back.division == 3);
  tc.division = 10;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("evaluation of perfect curves") {
  labels::VideoMeta meta;
  meta.video_id = "x";
  meta.total_frames = 400;
  const std::vector<std::vector<std::size_t>> ann{{60, 200, 320}};
  LoadedVideo v;
  v.video_id = "x";
  v.meta = meta;
  v.label = labels::ground_truth(ann, labels::sigma_frames(meta), 400).values;
  const std::vector<LoadedVideo> vids{v};
  const std::vector<std::vector<double>> preds{v.label};
  const auto rep = evaluate_curves(vids, preds, 0.3, 20);
  CHECK(rep.f_measure == 1.0);
  CHECK(rep.test_loss == 0.0);
  CHECK(rep.videos[0].estimated == 3);

  const std::vector<std::vector<double>> flat{std::vector<double>(400, 0.0)};
  const auto zero = evaluate_curves(vids, flat, 0.3, 20);
  CHECK(zero.recall == 0.0);
  CHECK(zero.videos[0].estimated == 0);
}

TEST_CASE("early stopping counter semantics") {
  TempDir dir("choreoseg_patience_test");
  SynthConfig sc;
  sc.videos = 2;
  sc.frames = 240;
  auto idx = write_synth_dataset(sc, dir.path / "data");
  extract_index_features(idx, dir.path / "features");
  const auto videos = load_videos(idx, {"synth_000", "synth_001"});
  const std::span<const LoadedVideo> train_set(videos.data(), 1);
  const std::span<const LoadedVideo> val_set(videos.data() + 1, 1);

  segnet::ModelConfig mc;
  mc.layers = 2;
  const segnet::SegNet net(mc, 3);

  // One training video: the loss falls over the first epochs.
  TrainConfig first;
  first.max_epochs = 5;
  const auto warm = train(net, train_set, {}, first);
  REQUIRE(warm.history.size() == 5);
  for (std::size_t e = 1; e < 5; ++e) CHECK(warm.history[e].train_loss < warm.history[e - 1].train_loss);

  TrainConfig tc;
  tc.adam.lr = 0.05;
  tc.patience = 2;
  tc.max_epochs = 60;
  const auto r = train(net, train_set, val_set, tc);
  double best = std::numeric_limits<double>::infinity();
  std::size_t since = 0;
  for (const auto& e : r.history) {
    CHECK(e.improved == (e.val_loss < best));
    if (e.val_loss < best) {
      best = e.val_loss;
      since = 0;
    } else {
      ++since;
    }
  }
  CHECK(r.best_val_loss == best);
  if (r.early_stopped) {
    CHECK(since == tc.patience);
    CHECK(r.history.size() == r.best_epoch + tc.patience);
  } else {
    CHECK(r.history.size() == tc.max_epochs);
  }
}
