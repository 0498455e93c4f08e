#pragma once

// Two-task gradient blending for the shared encoder: the closed-form
// min-norm (MGDA) weight and the ablation baselines.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "paretopic/diffnet.hpp"
#include "paretopic/error.hpp"
#include "paretopic/rng.hpp"

namespace paretopic::moo {

using diffnet::GradientVector;

enum class Strategy { mgda, linear, random, pcgrad };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::mgda: return "mgda";
    case Strategy::linear: return "linear";
    case Strategy::random: return "random";
    case Strategy::pcgrad: return "pcgrad";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& name) {
  if (name == "mgda") return Strategy::mgda;
  if (name == "linear") return Strategy::linear;
  if (name == "random") return Strategy::random;
  if (name == "pcgrad") return Strategy::pcgrad;
  throw ConfigError("unknown moo strategy '" + name + "' (expected mgda|linear|random|pcgrad)");
}

inline constexpr double kDefaultTieEps = 1e-12;

namespace detail {

inline void check_pair(std::span<const double> g1, std::span<const double> g2) {
  if (g1.size() != g2.size()) {
    throw ShapeError("gradient length mismatch: " + std::to_string(g1.size()) + " vs " +
                     std::to_string(g2.size()));
  }
}

// ‖g1 − g2‖².
inline double diff_sq(std::span<const double> g1, std::span<const double> g2) {
  double s = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    const double d = g1[i] - g2[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

// Minimizer over α ∈ [0,1] of ‖α·g1 + (1−α)·g2‖²:
//   α* = clip((g2 − g1)ᵀg2 / ‖g1 − g2‖², 0, 1),
// and 0.5 when ‖g1 − g2‖² < tie_eps (every α gives the same direction).
inline double alpha_min_norm(std::span<const double> g1, std::span<const double> g2,
                             double tie_eps = kDefaultTieEps) {
  detail::check_pair(g1, g2);
  const double denom = detail::diff_sq(g1, g2);
  if (denom < tie_eps) return 0.5;
  double num = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) num += (g2[i] - g1[i]) * g2[i];
  return std::clamp(num / denom, 0.0, 1.0);
}

// Brute-force minimizer of the same quadratic on the grid {k/steps}. The
// first grid point wins ties.
inline double alpha_grid_oracle(std::span<const double> g1, std::span<const double> g2,
                                std::size_t steps) {
  detail::check_pair(g1, g2);
  if (steps < 100) throw ConfigError("alpha_grid_oracle: steps must be >= 100");
  const double n11 = diffnet::dot(g1, g1);
  const double n22 = diffnet::dot(g2, g2);
  const double n12 = diffnet::dot(g1, g2);
  double best_alpha = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k <= steps; ++k) {
    const double a = static_cast<double>(k) / static_cast<double>(steps);
    const double b = 1.0 - a;
    const double h = a * a * n11 + 2.0 * a * b * n12 + b * b * n22;
    if (h < best) {
      best = h;
      best_alpha = a;
    }
  }
  return best_alpha;
}

inline std::vector<double> blend(std::span<const double> g1, std::span<const double> g2,
                                 double alpha) {
  detail::check_pair(g1, g2);
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("blend: alpha=" + std::to_string(alpha) + " outside [0, 1]");
  }
  std::vector<double> d(g1.size());
  for (std::size_t i = 0; i < g1.size(); ++i) d[i] = alpha * g1[i] + (1.0 - alpha) * g2[i];
  return d;
}

// PCGrad: when the gradients conflict (g1·g2 < 0) each is projected onto the
// normal plane of the other before summing; otherwise they are summed.
inline std::vector<double> pcgrad_direction(std::span<const double> g1,
                                            std::span<const double> g2) {
  detail::check_pair(g1, g2);
  const double d12 = diffnet::dot(g1, g2);
  std::vector<double> out(g1.size());
  if (d12 >= 0.0) {
    for (std::size_t i = 0; i < g1.size(); ++i) out[i] = g1[i] + g2[i];
    return out;
  }
  const double n11 = diffnet::dot(g1, g1);
  const double n22 = diffnet::dot(g2, g2);
  const double c1 = n22 > 0.0 ? d12 / n22 : 0.0;
  const double c2 = n11 > 0.0 ? d12 / n11 : 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    out[i] = (g1[i] - c1 * g2[i]) + (g2[i] - c2 * g1[i]);
  }
  return out;
}

struct Diagnostics {
  double g1_norm = 0.0;
  double g2_norm = 0.0;
  double direction_norm = 0.0;
  double g1_dot_g2 = 0.0;
  bool degenerate = false;  // ‖g1 − g2‖² below tie_eps: the objective is flat in α
};

struct BlendDecision {
  std::optional<double> alpha;  // empty for pcgrad
  GradientVector direction;
  Strategy strategy = Strategy::mgda;
  Diagnostics diagnostics;
};

struct StrategyParams {
  double linear_alpha = 0.5;
  double tie_eps = kDefaultTieEps;
};

// g1 is the contrastive gradient, g2 the ELBO gradient; α weights g1.
inline BlendDecision strategy_dispatch(Strategy strategy, const GradientVector& g1,
                                       const GradientVector& g2, const StrategyParams& params,
                                       Rng& rng) {
  detail::check_pair(g1.values, g2.values);
  if (!g1.layout_id.empty() && !g2.layout_id.empty() && g1.layout_id != g2.layout_id) {
    throw ShapeError("strategy_dispatch: layouts differ (" + g1.layout_id + " vs " +
                     g2.layout_id + ")");
  }
  BlendDecision d;
  d.strategy = strategy;
  d.direction.layout_id = g1.layout_id.empty() ? g2.layout_id : g1.layout_id;
  switch (strategy) {
    case Strategy::mgda:
      d.alpha = alpha_min_norm(g1.values, g2.values, params.tie_eps);
      break;
    case Strategy::linear:
      d.alpha = params.linear_alpha;
      break;
    case Strategy::random: {
      // Random weighting: two uniform draws, softmax-normalized.
      const double u1 = rng.uniform();
      const double u2 = rng.uniform();
      d.alpha = 1.0 / (1.0 + std::exp(u2 - u1));
      break;
    }
    case Strategy::pcgrad:
      break;
  }
  if (d.alpha) {
    d.direction.values = blend(g1.values, g2.values, *d.alpha);
  } else {
    d.direction.values = pcgrad_direction(g1.values, g2.values);
  }
  d.diagnostics.g1_norm = diffnet::norm(g1.values);
  d.diagnostics.g2_norm = diffnet::norm(g2.values);
  d.diagnostics.direction_norm = diffnet::norm(d.direction.values);
  d.diagnostics.g1_dot_g2 = diffnet::dot(g1.values, g2.values);
  d.diagnostics.degenerate = detail::diff_sq(g1.values, g2.values) < params.tie_eps;
  return d;
}

}  // namespace paretopic::moo
