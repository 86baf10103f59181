#include "choreoseg/pipeline/train.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "choreoseg/error.hpp"
#include "choreoseg/labels.hpp"
#include "choreoseg/nn/kernels.hpp"
#include "choreoseg/rng.hpp"

namespace choreoseg::pipeline {

namespace {

constexpr std::uint64_t kDropoutStream = 1;
constexpr std::uint64_t kShuffleStreamBase = 1000;

}  // namespace

void TrainConfig::validate() const {
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (patience == 0) throw ConfigError("patience must be at least 1");
  if (division >= kDivisionCount) throw ConfigError("division must lie in [0, 10)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", adam.lr},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"eps", adam.eps},
          {"patience", patience},
          {"max_epochs", max_epochs},
          {"seed", seed},
          {"split_seed", split_seed},
          {"division", division}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("eps", c.adam.eps);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seed = j.value("seed", c.seed);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.division = j.value("division", c.division);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()}, {"train", train.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  if (j.contains("model")) c.model = segnet::ModelConfig::from_json(j["model"]);
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json TrainResult::history_json() const {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& r : history) {
    epochs.push_back({{"epoch", r.epoch},
                      {"train_loss", r.train_loss},
                      {"val_loss", r.val_loss},
                      {"improved", r.improved}});
  }
  return {{"epochs", epochs},
          {"best_epoch", best_epoch},
          {"best_val_loss", best_val_loss},
          {"early_stopped", early_stopped}};
}

double mean_loss(const segnet::SegNet& model, std::span<const LoadedVideo> videos) {
  if (videos.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& v : videos) sum += nn::l1_loss(model.predict(v.input), v.label);
  return sum / double(videos.size());
}

TrainResult train(segnet::SegNet model, std::span<const LoadedVideo> train_set,
                  std::span<const LoadedVideo> val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  TrainResult result{model, {}, 0, 0.0, false};
  if (cfg.max_epochs == 0) {
    result.best_val_loss = mean_loss(model, val_set.empty() ? train_set : val_set);
    return result;
  }

  Rng dropout_rng(derive_seed(cfg.seed, kDropoutStream));
  nn::AdamState adam = nn::make_adam_state(model.params(), cfg.adam);
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStreamBase + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double sum = 0.0;
    for (std::size_t idx : order) {
      const LoadedVideo& v = train_set[idx];
      model.zero_grad();
      const auto trace = model.forward(v.input, true, &dropout_rng);
      const double loss = nn::l1_loss(trace.probability, v.label);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch << " on video " << v.video_id
           << " after " << adam.step_count << " optimizer steps";
        throw TrainingDivergedError(os.str());
      }
      model.backward(trace, v.input, nn::l1_backward(trace.probability, v.label));
      nn::adam_step(model.params(), adam);
      sum += loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = sum / double(train_set.size());
    rec.val_loss = val_set.empty() ? rec.train_loss : mean_loss(model, val_set);
    if (!std::isfinite(rec.val_loss)) {
      throw TrainingDivergedError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rec.improved = rec.val_loss < best;
    if (rec.improved) {
      best = rec.val_loss;
      result.model = model;
      result.best_epoch = epoch;
      result.best_val_loss = best;
      stale = 0;
    } else {
      ++stale;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (stale >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : videos) {
    per.push_back({{"video_id", v.video_id},
                   {"precision", v.metrics.precision},
                   {"recall", v.metrics.recall},
                   {"f_measure", v.metrics.f_measure},
                   {"loss", v.loss},
                   {"estimated_points", v.estimated},
                   {"ground_truth_points", v.ground_truth}});
  }
  return {{"precision", precision}, {"recall", recall},       {"f_measure", f_measure},
          {"mean_video_f", mean_video_f}, {"test_loss", test_loss}, {"threshold", threshold},
          {"window", window},       {"videos", per}};
}

EvalReport evaluate_curves(std::span<const LoadedVideo> videos,
                           std::span<const std::vector<double>> predictions, double h,
                           std::size_t w) {
  if (videos.size() != predictions.size()) throw ShapeError("one prediction per video required");
  EvalReport r;
  r.threshold = h;
  r.window = w;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& v = videos[i];
    VideoEval e;
    e.video_id = v.video_id;
    e.loss = nn::l1_loss(predictions[i], v.label);
    const auto est = pick_peaks(predictions[i], h, w);
    const auto gt = pick_peaks(v.label, h, w);
    e.estimated = est.size();
    e.ground_truth = gt.size();
    e.metrics = evaluate(est, gt, labels::tolerance_frames(v.meta));
    r.precision += e.metrics.precision;
    r.recall += e.metrics.recall;
    r.mean_video_f += e.metrics.f_measure;
    r.test_loss += e.loss;
    r.videos.push_back(std::move(e));
  }
  if (!videos.empty()) {
    const double n = double(videos.size());
    r.precision /= n;
    r.recall /= n;
    r.mean_video_f /= n;
    r.test_loss /= n;
  }
  r.f_measure = f_measure(r.precision, r.recall);
  return r;
}

EvalReport run_eval(const segnet::SegNet& model, std::span<const LoadedVideo> videos, double h,
                    std::size_t w) {
  std::vector<std::vector<double>> preds;
  preds.reserve(videos.size());
  for (const auto& v : videos) preds.push_back(model.predict(v.input));
  return evaluate_curves(videos, preds, h, w);
}

}  // namespace choreoseg::pipeline
