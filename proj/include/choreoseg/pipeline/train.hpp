#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "choreoseg/nn/optim.hpp"
#include "choreoseg/pipeline/features.hpp"
#include "choreoseg/pipeline/metrics.hpp"
#include "choreoseg/pipeline/peaks.hpp"
#include "choreoseg/segnet.hpp"
#include "json.hpp"

namespace choreoseg::pipeline {

struct TrainConfig {
  nn::AdamConfig adam;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  /// Seeds model init, epoch shuffles, and dropout.
  std::uint64_t seed = 0;
  /// Seed and index of the division to train on (CLI use).
  std::uint64_t split_seed = 0;
  std::size_t division = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Config file: {"model": {...}, "train": {...}}; either part may be absent.
struct RunConfig {
  segnet::ModelConfig model;
  TrainConfig train;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool improved = false;
};

struct TrainResult {
  segnet::SegNet model;  // parameters with the best validation loss
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_loss = 0.0;
  bool early_stopped = false;

  nlohmann::json history_json() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean L1 loss of inference-mode predictions.
double mean_loss(const segnet::SegNet& model, std::span<const LoadedVideo> videos);

/// One Adam step per training video per epoch (batch size 1), visiting videos
/// in a freshly shuffled order each epoch. After each epoch the validation
/// loss is compared to the best so far with strict <; training stops after
/// `patience` epochs without improvement or at max_epochs. Without validation
/// videos the epoch's training loss stands in. Throws TrainingDivergedError on
/// a non-finite loss.
TrainResult train(segnet::SegNet model, std::span<const LoadedVideo> train_set,
                  std::span<const LoadedVideo> val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct VideoEval {
  std::string video_id;
  Metrics metrics;
  double loss = 0.0;
  std::size_t estimated = 0;
  std::size_t ground_truth = 0;
};

struct EvalReport {
  /// Means over videos. f_measure is the harmonic mean of the mean precision
  /// and mean recall; mean_video_f averages the per-video F values.
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  double mean_video_f = 0.0;
  double test_loss = 0.0;
  double threshold = kDefaultThreshold;
  std::size_t window = kDefaultWindow;
  std::vector<VideoEval> videos;

  nlohmann::json to_json() const;
};

/// Peaks from the prediction and from the ground-truth label, both via
/// pick_peaks(h, w), matched within half a beat.
EvalReport run_eval(const segnet::SegNet& model, std::span<const LoadedVideo> videos,
                    double h = kDefaultThreshold, std::size_t w = kDefaultWindow);

/// Same report for precomputed probability curves (one per video).
EvalReport evaluate_curves(std::span<const LoadedVideo> videos,
                           std::span<const std::vector<double>> predictions, double h,
                           std::size_t w);

}  // namespace choreoseg::pipeline
