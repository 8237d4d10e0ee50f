#pragma once

// Central finite-difference oracle shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dialoc/tensor.hpp"
#include "dialoc/util.hpp"

namespace dialoc::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates straddling a ReLU kink
};

/// Compares backward() against central differences of L = sum(f(inputs) * R)
/// for a fixed random projection R. The numeric loss is accumulated in double.
/// Error is the max-norm of (analytic - numeric) relative to the larger max-norm.
/// With skip_kinks, coordinates whose one-sided differences disagree by more than
/// 2% of that max-norm are left out and counted.
inline GradCheckResult grad_check(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Var> inputs,
                                  Rng& rng, double step = 1e-3, bool skip_kinks = false) {
  Var out = f(inputs);
  const Tensor projection = random_tensor(out->value.shape(), rng);
  Var loss = sum(mul(out, constant(projection)));
  for (auto& in : inputs) in->grad = Tensor();
  backward(loss);

  auto numeric_loss = [&] {
    NoGradGuard guard;
    const Var o = f(inputs);
    double acc = 0.0;
    for (std::size_t i = 0; i < o->value.numel(); ++i) acc += static_cast<double>(o->value[i]) * projection[i];
    return acc;
  };

  const double center = skip_kinks ? numeric_loss() : 0.0;
  struct Probe {
    double analytic, forward, backward;
  };
  std::vector<Probe> probes;
  for (auto& in : inputs) {
    if (!in->requires_grad) continue;
    const Tensor analytic = in->grad.empty() ? Tensor::zeros(in->value.shape()) : in->grad;
    for (std::size_t i = 0; i < in->value.numel(); ++i) {
      const float saved = in->value[i];
      const float hi = saved + static_cast<float>(step);
      const float lo = saved - static_cast<float>(step);
      in->value[i] = hi;
      const double up = numeric_loss();
      in->value[i] = lo;
      const double down = numeric_loss();
      in->value[i] = saved;
      const double central = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      if (skip_kinks) {
        probes.push_back({analytic[i], (up - center) / (hi - static_cast<double>(saved)),
                          (center - down) / (static_cast<double>(saved) - lo)});
      } else {
        probes.push_back({analytic[i], central, central});
      }
    }
  }

  double denom = 1e-6, max_analytic = 0.0;
  for (const auto& p : probes) {
    denom = std::max({denom, std::abs(p.analytic), std::abs(0.5 * (p.forward + p.backward))});
    max_analytic = std::max(max_analytic, std::abs(p.analytic));
  }
  GradCheckResult result;
  double max_diff = 0.0;
  for (const auto& p : probes) {
    if (skip_kinks && std::abs(p.forward - p.backward) > 2e-2 * denom) {
      ++result.skipped;
      continue;
    }
    ++result.checked;
    max_diff = std::max(max_diff, std::abs(0.5 * (p.forward + p.backward) - p.analytic));
  }
  result.max_rel_error = max_diff / denom;
  result.max_abs_grad = max_analytic;
  return result;
}

}  // namespace dialoc::testing
