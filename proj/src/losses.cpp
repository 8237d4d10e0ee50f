#include "dialoc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dialoc {

namespace {

void check_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

int to_target_axis(int v, int from, int to) {
  const int t = static_cast<int>(std::floor((v + 0.5) * to / static_cast<double>(from)));
  return std::clamp(t, 0, to - 1);
}

}  // namespace

TargetHeatmap make_target_px(int h0, int w0, Point gt, double sigma_row_px, double sigma_col_px) {
  if (h0 < 1 || w0 < 1) throw std::invalid_argument("make_target: empty target grid");
  if (gt.x < 0 || gt.x >= w0 || gt.y < 0 || gt.y >= h0) {
    throw std::out_of_range("make_target: pixel (" + std::to_string(gt.y) + ", " + std::to_string(gt.x) +
                            ") outside " + std::to_string(h0) + "x" + std::to_string(w0));
  }
  auto axis_weight = [](int d, double sigma) {
    if (sigma <= 0.0) return d == 0 ? 1.0 : 0.0;
    return std::exp(-0.5 * (d * d) / (sigma * sigma));
  };
  std::vector<double> values(static_cast<std::size_t>(h0) * w0);
  double total = 0.0;
  for (int r = 0; r < h0; ++r) {
    const double wr = axis_weight(r - gt.y, sigma_row_px);
    for (int c = 0; c < w0; ++c) {
      double v = wr * axis_weight(c - gt.x, sigma_col_px);
      if (v < kTargetTruncation) v = 0.0;  // peak is exactly 1
      values[static_cast<std::size_t>(r) * w0 + c] = v;
      total += v;
    }
  }
  TargetHeatmap t;
  t.heat = Tensor({h0, w0});
  t.mask = Tensor({h0, w0});
  for (std::size_t i = 0; i < values.size(); ++i) {
    t.heat[i] = static_cast<float>(values[i] / total);
    t.mask[i] = values[i] > 0.0 ? 1.0f : 0.0f;
  }
  t.gt_pixel = gt;
  t.sigma_px_row = sigma_row_px;
  t.sigma_px_col = sigma_col_px;
  return t;
}

Point map_to_target(const WorldMap& world, Point p, int h0, int w0) {
  return {to_target_axis(p.x, world.width_px, w0), to_target_axis(p.y, world.height_px, h0)};
}

Point target_to_map(const WorldMap& world, Point p, int h0, int w0) {
  return {to_target_axis(p.x, w0, world.width_px), to_target_axis(p.y, h0, world.height_px)};
}

TargetHeatmap make_target(const WorldMap& world, Point gt_pixel, double sigma_m, int h0, int w0) {
  if (gt_pixel.x < 0 || gt_pixel.x >= world.width_px || gt_pixel.y < 0 || gt_pixel.y >= world.height_px) {
    throw std::out_of_range("make_target: ground-truth pixel outside the map");
  }
  const double sigma_map_px = sigma_m / world.meters_per_pixel;
  return make_target_px(h0, w0, map_to_target(world, gt_pixel, h0, w0),
                        sigma_map_px * h0 / static_cast<double>(world.height_px),
                        sigma_map_px * w0 / static_cast<double>(world.width_px));
}

Var kl_loss(const Var& logits, const Tensor& target) {
  check_same(logits->value.shape(), target.shape(), "kl_loss");
  const int n = static_cast<int>(target.numel());
  Tensor log_target({1, n});
  Tensor weights({1, n});
  for (int i = 0; i < n; ++i) {
    weights[i] = target[i];
    log_target[i] = target[i] > 0.0f ? std::log(target[i]) : 0.0f;
  }
  Var log_p = log_softmax(reshape(logits, {1, n}), 1);
  return sum(mul(constant(weights), sub(constant(log_target), log_p)));
}

Var multishot_loss(const std::vector<Var>& heatmaps, const std::vector<const Tensor*>& targets, double alpha) {
  const int T = static_cast<int>(heatmaps.size());
  if (T < 1) throw std::invalid_argument("multishot_loss: no heatmaps");
  if (targets.size() != 1 && static_cast<int>(targets.size()) != T) {
    throw DimensionError("multishot_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(T) +
                         " turns");
  }
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("multishot_loss: alpha outside [0, 1]");
  Var total;
  for (int t = 0; t < T; ++t) {
    const int exponent = T - 1 - t;
    const double w = exponent == 0 ? 1.0 : std::pow(alpha, exponent);
    if (w == 0.0) continue;
    const Tensor& target = *targets[targets.size() == 1 ? 0 : t];
    Var term = scale(kl_loss(heatmaps[t], target), static_cast<float>(w / T));
    total = total ? add(total, term) : term;
  }
  return total;
}

Var aux_loss(const std::vector<Var>& heatmaps, const std::vector<const Tensor*>& targets,
             const std::vector<const Tensor*>& masks) {
  const int T = static_cast<int>(heatmaps.size());
  if (T < 1) throw std::invalid_argument("aux_loss: no heatmaps");
  if (targets.size() != masks.size() || (targets.size() != 1 && static_cast<int>(targets.size()) != T)) {
    throw DimensionError("aux_loss: target/mask count does not match " + std::to_string(T) + " turns");
  }
  Var total;
  for (int t = 0; t < T; ++t) {
    const std::size_t k = targets.size() == 1 ? 0 : static_cast<std::size_t>(t);
    check_same(heatmaps[t]->value.shape(), targets[k]->shape(), "aux_loss");
    check_same(heatmaps[t]->value.shape(), masks[k]->shape(), "aux_loss");
    Var diff = sub(mul(sigmoid(heatmaps[t]), constant(*masks[k])), constant(*targets[k]));
    Var term = scale(mean(square(diff)), 1.0f / static_cast<float>(T));
    total = total ? add(total, term) : term;
  }
  return total;
}

LossTerms total_loss(const std::vector<Var>& heatmaps, const std::vector<const TargetHeatmap*>& targets,
                     const LossConfig& config) {
  if (config.beta < 0.0) throw std::invalid_argument("total_loss: beta must be >= 0");
  std::vector<const Tensor*> heat, mask;
  for (const auto* t : targets) {
    heat.push_back(&t->heat);
    mask.push_back(&t->mask);
  }
  LossTerms terms;
  terms.multishot = multishot_loss(heatmaps, heat, config.alpha);
  terms.aux = aux_loss(heatmaps, heat, mask);
  terms.total = config.beta == 0.0 ? terms.multishot
                                   : add(terms.multishot, scale(terms.aux, static_cast<float>(config.beta)));
  return terms;
}

}  // namespace dialoc
