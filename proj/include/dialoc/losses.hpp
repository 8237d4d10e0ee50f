#pragma once

#include <vector>

#include "dialoc/tensor.hpp"
#include "dialoc/world.hpp"

namespace dialoc {

/// Gaussian ground-truth distribution over the target grid.
struct TargetHeatmap {
  Tensor heat;   // [h0, w0], non-negative, sums to 1
  Tensor mask;   // [h0, w0], 1 where heat > 0
  Point gt_pixel;  // target-grid coordinates
  double sigma_px_row = 0.0;
  double sigma_px_col = 0.0;
};

/// Values below this fraction of the peak are cut to exactly 0 (defines the mask).
constexpr double kTargetTruncation = 1e-6;

/// Gaussian centred on an integer target pixel with per-axis sigma in target pixels.
/// sigma <= 0 on an axis collapses that axis to the centre pixel.
TargetHeatmap make_target_px(int h0, int w0, Point gt, double sigma_row_px, double sigma_col_px);

/// Maps a map pixel to the target grid and uses sigma = sigma_m / metersPerPixel,
/// scaled by the map-to-target resize ratio.
TargetHeatmap make_target(const WorldMap& world, Point gt_pixel, double sigma_m, int h0, int w0);

/// Map pixel -> target grid pixel (pixel-center convention).
Point map_to_target(const WorldMap& world, Point p, int h0, int w0);
/// Target grid pixel -> map pixel (pixel-center convention).
Point target_to_map(const WorldMap& world, Point p, int h0, int w0);

struct LossConfig {
  double alpha = 0.0;  // decay; weight of turn t is alpha^(T-t), 0^0 = 1
  double beta = 1.0;   // auxiliary weight
  bool per_turn_targets = false;
};

/// sum H~ (log H~ - log_softmax(H)), softmax over all pixels jointly, 0 log 0 = 0.
Var kl_loss(const Var& logits, const Tensor& target);
/// (1/T) sum_t alpha^(T-t) kl(H_t, target_t). `targets` has one entry or T entries.
Var multishot_loss(const std::vector<Var>& heatmaps, const std::vector<const Tensor*>& targets, double alpha);
/// (1/T) sum_t mean((sigmoid(H_t) * mask - H~)^2).
Var aux_loss(const std::vector<Var>& heatmaps, const std::vector<const Tensor*>& targets,
             const std::vector<const Tensor*>& masks);

struct LossTerms {
  Var total;
  Var multishot;
  Var aux;
};

LossTerms total_loss(const std::vector<Var>& heatmaps, const std::vector<const TargetHeatmap*>& targets,
                     const LossConfig& config);

}  // namespace dialoc
