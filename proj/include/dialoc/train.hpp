#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dialoc/dataset.hpp"
#include "dialoc/losses.hpp"
#include "dialoc/metrics.hpp"
#include "dialoc/model.hpp"

namespace dialoc {

struct AugmentConfig {
  bool enabled = true;
  double color_jitter = 0.2;  // brightness/contrast/saturation factors in [1 - s, 1 + s]
  std::array<double, 2> crop_ratio{0.9, 1.0};   // aspect ratio w/h
  std::array<double, 2> crop_scale{0.75, 1.0};  // fraction of the map area
  bool rotate180 = true;
  int max_crop_tries = 10;
};

struct DialogAugmentConfig {
  bool enabled = false;
  std::string provider = "ruleBased";  // or "remoteCompletion"
  double probability = 0.5;
  std::string remote_url;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global norm, 0 disables
  std::uint64_t seed = 0;
  double sigma_m = 3.0;
  int eval_every = 1;  // epochs
  int max_steps = 0;   // 0 = no cap
  std::vector<std::string> eval_splits{"valSeen", "valUnseen"};
  std::string best_split = "valUnseen";
  AugmentConfig augmentation;
  DialogAugmentConfig dialog_augmentation;
  LossConfig loss;
  ModelConfig model;

  /// Throws std::invalid_argument naming the first out-of-range field.
  void validate() const;
  std::string to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const std::string& text);
  /// fnv1a64 of the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

// ---- augmentation ---------------------------------------------------------------

struct AugmentedSample {
  Tensor image;          // [3, S, S]
  TargetHeatmap target;  // on the target grid
  Point gt_pixel;        // map pixels after the transform
  bool rotated = false;
  bool cropped = false;
  double crop_scale = 1.0;  // area fraction actually used
  // Crop window in normalized map coordinates.
  double crop_x0 = 0.0, crop_y0 = 0.0, crop_w = 1.0, crop_h = 1.0;
};

/// Crops with the sampled ratio/scale (resampled while the crop would drop the
/// ground-truth pixel), resizes back, optionally rotates by 180 degrees and jitters
/// color. The target is rebuilt on the transformed geometry.
AugmentedSample augment(const Tensor& image, Point gt_pixel, const WorldMap& world, double sigma_m, int h0, int w0,
                        const AugmentConfig& config, std::uint64_t seed);

/// Where a map pixel lands under the sample's transform (clamped to the map).
Point transformed_point(const AugmentedSample& aug, Point p, const WorldMap& world);
/// Target for another map pixel under the same transform (per-turn targets).
TargetHeatmap transformed_target(const AugmentedSample& aug, Point p, const WorldMap& world, double sigma_m, int h0,
                                 int w0);

/// Rotates [3, S, S] by 180 degrees.
Tensor rotate180(const Tensor& image);
/// Swaps north/south and west/east token ids, matching a 180 degree map rotation.
std::vector<int> rotate_direction_tokens(const std::vector<int>& tokens);

// ---- optimizer --------------------------------------------------------------------

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}
  /// p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p for every trainable
  /// parameter. Throws NumericError naming the parameter on a non-finite gradient,
  /// before anything is modified.
  void step(std::vector<Parameter>& params);
  std::uint64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  AdamWConfig& config() { return config_; }

 private:
  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Scales gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(std::vector<Parameter>& params, double max_norm);

// ---- training loop ------------------------------------------------------------------

struct EpochEval {
  int epoch = 0;
  int step = 0;
  std::string split;
  SplitSummary summary;
};

struct TrainResult {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log_path;
  double best_score = -1.0;
  int best_epoch = 0;
  int steps = 0;
  std::vector<double> step_losses;
  std::vector<EpochEval> evals;
  std::string config_hash;
};

struct TrainHooks {
  /// Called after every evaluation; returning false stops training.
  std::function<bool(const EpochEval&)> on_eval;
};

/// Full loop: shuffled mini-batches, per-step JSONL {step, loss, lms, laux}, per-eval
/// JSONL {epoch, split, acc0, acc5, meanLE}, best checkpoint by Acc5 on best_split.
/// Writes config.json, train_log.jsonl, best.ckpt and last.ckpt under out_dir.
TrainResult train(const TrainConfig& config, const Dataset& dataset, const std::filesystem::path& out_dir,
                  const TrainHooks& hooks = {});

// ---- sweeps --------------------------------------------------------------------------

struct SweepRow {
  std::string axis;
  double value = 0.0;
  std::string config_hash;
  std::vector<std::pair<std::string, SplitSummary>> splits;
};

/// Axis is one of depth, alpha, beta, augmentation (0/1 toggles dialog augmentation).
TrainConfig apply_sweep_value(const TrainConfig& base, const std::string& axis, double value);
std::vector<SweepRow> sweep(const std::string& axis, const std::vector<double>& values, const TrainConfig& base,
                            const Dataset& dataset, const std::filesystem::path& out_dir);
std::string sweep_to_json(const std::vector<SweepRow>& rows);
std::string sweep_table(const std::vector<SweepRow>& rows);

}  // namespace dialoc
