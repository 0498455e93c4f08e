#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "paretopic/moo.hpp"
#include "paretopic/rng.hpp"
#include "paretopic/selftest.hpp"

using namespace paretopic;
using namespace paretopic::moo;
using Vec = std::vector<double>;

namespace {

double h(const Vec& g1, const Vec& g2, double a) {
  const auto d = blend(g1, g2, a);
  return diffnet::dot(d, d);
}

GradientVector gv(Vec v) { return {std::move(v), "test"}; }

}  // namespace

TEST(AlphaMinNorm, Examples) {
  EXPECT_DOUBLE_EQ(alpha_min_norm(Vec{1, 0}, Vec{0, 1}), 0.5);
  EXPECT_EQ(blend(Vec{1, 0}, Vec{0, 1}, 0.5), (Vec{0.5, 0.5}));
  EXPECT_EQ(alpha_min_norm(Vec{2, 0}, Vec{1, 0}), 0.0);
  EXPECT_DOUBLE_EQ(alpha_min_norm(Vec{1, 0}, Vec{-1, 0}), 0.5);
  EXPECT_EQ(blend(Vec{1, 0}, Vec{-1, 0}, 0.5), (Vec{0, 0}));
  EXPECT_EQ(alpha_min_norm(Vec{1, 0}, Vec{3, 0}), 1.0);
  EXPECT_THROW(alpha_min_norm(Vec{1, 0}, Vec{1}), ShapeError);
}

TEST(AlphaMinNorm, DegeneratePair) {
  EXPECT_EQ(alpha_min_norm(Vec{1, 2}, Vec{1, 2}), 0.5);
  EXPECT_EQ(alpha_min_norm(Vec{1, 2}, Vec{1, 2 + 1e-7}), 0.5);
  Rng rng(1);
  const auto d = strategy_dispatch(Strategy::mgda, gv({3, 4}), gv({3, 4}), {}, rng);
  EXPECT_TRUE(d.diagnostics.degenerate);
  EXPECT_EQ(d.direction.values, (Vec{3, 4}));
}

TEST(AlphaGridOracle, Examples) {
  EXPECT_DOUBLE_EQ(alpha_grid_oracle(Vec{1, 0}, Vec{0, 1}, 10000), 0.5);
  EXPECT_DOUBLE_EQ(alpha_grid_oracle(Vec{2, 0}, Vec{1, 0}, 10000), 0.0);
  EXPECT_THROW(alpha_grid_oracle(Vec{1, 0}, Vec{0, 1}, 99), ConfigError);
}

TEST(AlphaMinNorm, AgreesWithGridOracle) {
  const auto r = selftest::run_solver_oracle(1000, 10000, 99);
  EXPECT_LE(r.max_alpha_gap, 1e-4);
  EXPECT_LE(r.max_kkt_residual, 1e-8);
  EXPECT_LE(r.max_norm_excess, 1e-12);
  EXPECT_GT(r.interior, 100u);
}

TEST(AlphaMinNorm, OptimalAgainstCoarseGridAndClippedKkt) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t dim = 2 + rng.below(20);
    Vec g1(dim), g2(dim);
    const double s = std::exp(rng.uniform(-2, 2));
    for (auto& v : g1) v = rng.normal();
    for (auto& v : g2) v = s * rng.normal();
    const double a = alpha_min_norm(g1, g2);
    const double best = h(g1, g2, a);
    for (const double b : {0.0, 0.25, 0.5, 0.75, 1.0}) EXPECT_LE(best, h(g1, g2, b) + 1e-12);
    const auto d = blend(g1, g2, a);
    const double dd = diffnet::dot(d, d);
    if (a == 0.0) {
      EXPECT_GE(diffnet::dot(d, g1), dd - 1e-10);
    }
    if (a == 1.0) {
      EXPECT_GE(diffnet::dot(d, g2), dd - 1e-10);
    }
  }
}

TEST(Blend, Examples) {
  const Vec g1{2, 0}, g2{0, 2};
  EXPECT_EQ(blend(g1, g2, 0.0), g2);
  EXPECT_EQ(blend(g1, g2, 1.0), g1);
  EXPECT_EQ(blend(g1, g2, 0.5), (Vec{1, 1}));
  EXPECT_THROW(blend(g1, g2, 1.5), ConfigError);
  EXPECT_THROW(blend(g1, g2, -0.1), ConfigError);
}

TEST(Strategy, ParseAndName) {
  for (const auto s : {Strategy::mgda, Strategy::linear, Strategy::random, Strategy::pcgrad})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("uw"), ConfigError);
}

TEST(Strategy, LinearEqualsBlend) {
  Rng rng(1);
  StrategyParams p;
  p.linear_alpha = 0.5;
  const auto d = strategy_dispatch(Strategy::linear, gv({1, 3}), gv({-2, 5}), p, rng);
  EXPECT_EQ(d.direction.values, blend(Vec{1, 3}, Vec{-2, 5}, 0.5));
  EXPECT_EQ(*d.alpha, 0.5);
}

TEST(Strategy, PcgradNoConflictSums) {
  Rng rng(1);
  const auto d = strategy_dispatch(Strategy::pcgrad, gv({1, 2}), gv({3, 0}), {}, rng);
  EXPECT_EQ(d.direction.values, (Vec{4, 2}));
  EXPECT_FALSE(d.alpha.has_value());
}

TEST(Strategy, PcgradConflictProjects) {
  // g1'=(1,0)−(−1/2)(−1,1)=(0.5,0.5); g2'=(−1,1)−(−1/1)(1,0)=(0,1).
  const auto d = pcgrad_direction(Vec{1, 0}, Vec{-1, 1});
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], 1.5);
  // Each projected gradient is orthogonal to the other original gradient.
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Vec g1(4), g2(4);
    for (auto& v : g1) v = rng.normal();
    for (auto& v : g2) v = rng.normal();
    if (diffnet::dot(g1, g2) >= 0) continue;
    const double c1 = diffnet::dot(g1, g2) / diffnet::dot(g2, g2);
    Vec p1(4);
    for (int i = 0; i < 4; ++i) p1[i] = g1[i] - c1 * g2[i];
    EXPECT_NEAR(diffnet::dot(p1, g2), 0.0, 1e-12);
  }
}

TEST(Strategy, RandomWeightingInSoftmaxRange) {
  Rng a(4), b(4);
  for (int i = 0; i < 200; ++i) {
    const auto d = strategy_dispatch(Strategy::random, gv({1, 0}), gv({0, 1}), {}, a);
    const auto e = strategy_dispatch(Strategy::random, gv({1, 0}), gv({0, 1}), {}, b);
    EXPECT_EQ(*d.alpha, *e.alpha);
    EXPECT_GT(*d.alpha, 1.0 / (1.0 + std::exp(1.0)));
    EXPECT_LT(*d.alpha, 1.0 / (1.0 + std::exp(-1.0)));
  }
}

TEST(Strategy, Diagnostics) {
  Rng rng(1);
  const auto d = strategy_dispatch(Strategy::mgda, gv({3, 0}), gv({0, 4}), {}, rng);
  EXPECT_DOUBLE_EQ(d.diagnostics.g1_norm, 3.0);
  EXPECT_DOUBLE_EQ(d.diagnostics.g2_norm, 4.0);
  EXPECT_DOUBLE_EQ(d.diagnostics.g1_dot_g2, 0.0);
  EXPECT_NEAR(*d.alpha, 16.0 / 25.0, 1e-15);
  EXPECT_THROW(strategy_dispatch(Strategy::mgda, {{1.0}, "a"}, {{1.0}, "b"}, {}, rng), ShapeError);
}
