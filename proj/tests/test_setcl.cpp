#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "paretopic/rng.hpp"
#include "paretopic/setcl.hpp"

using namespace paretopic;
using namespace paretopic::setcl;
using diffnet::Matrix;
using diffnet::PoolMode;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.normal();
  return m;
}

std::vector<SetRepresentation> reps_of(const std::vector<DocumentSet>& sets, const Matrix& Z,
                                       const Matrix& Zp, const Matrix& Zn, const Pooling& p = {}) {
  std::vector<SetRepresentation> out;
  for (const auto& s : sets) out.push_back(set_representations(s, Z, Zp, Zn, p));
  return out;
}

// Instance-wise InfoNCE written directly: anchor i against its positive view,
// negatives are the negative views of every other document.
double instance_infonce(const Matrix& Z, const Matrix& Zp, const Matrix& Zn, double tau) {
  auto cos = [](std::span<const double> a, std::span<const double> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      ab += a[k] * b[k];
      aa += a[k] * a[k];
      bb += b[k] * b[k];
    }
    return ab / std::sqrt(aa * bb);
  };
  double loss = 0;
  for (std::size_t i = 0; i < Z.rows(); ++i) {
    const double pos = std::exp(cos(Z.row(i), Zp.row(i)) / tau);
    double denom = pos;
    for (std::size_t j = 0; j < Z.rows(); ++j)
      if (j != i) denom += std::exp(cos(Z.row(i), Zn.row(j)) / tau);
    loss -= std::log(pos / denom);
  }
  return loss;
}

}  // namespace

TEST(IndexMatrix, IdentityRowAndPermutations) {
  const auto m1 = build_index_matrix(4, 1, 3);
  ASSERT_EQ(m1.rows.size(), 1u);
  EXPECT_EQ(m1.rows[0], (std::vector<std::size_t>{0, 1, 2, 3}));

  const auto a = build_index_matrix(4, 3, 9);
  const auto b = build_index_matrix(4, 3, 9);
  EXPECT_EQ(a.rows, b.rows);
  for (auto row : a.rows) {
    std::sort(row.begin(), row.end());
    EXPECT_EQ(row, (std::vector<std::size_t>{0, 1, 2, 3}));
  }
  const auto c = build_index_matrix(1, 5, 1);
  EXPECT_EQ(c.rows, std::vector<std::vector<std::size_t>>(5, {0}));
  EXPECT_THROW(build_index_matrix(0, 1, 1), ConfigError);
}

TEST(BuildSets, Examples) {
  EXPECT_EQ(build_sets(build_index_matrix(200, 8, 1), 4).size(), 400u);
  const auto s = build_sets(build_index_matrix(5, 1, 1), 2);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].members, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s[1].members, (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(build_sets(build_index_matrix(7, 3, 1), 1).size(), 21u);
  EXPECT_THROW(build_sets(build_index_matrix(3, 1, 1), 4), ConfigError);
  EXPECT_THROW(build_sets(build_index_matrix(3, 1, 1), 0), ConfigError);
}

TEST(BuildSets, CountSweep) {
  for (std::size_t B = 1; B <= 24; ++B)
    for (std::size_t K = 1; K <= B; ++K)
      for (std::size_t S = 1; S <= 4; ++S)
        EXPECT_EQ(build_sets(build_index_matrix(B, S, B * 100 + K), K).size(), S * (B / K));
}

TEST(SetRepresentations, Examples) {
  const Matrix Z{{1, 0}, {0, 1}};
  const DocumentSet both{{0, 1}, 0, 0};
  const auto r = set_representations(both, Z, Z, Z);
  EXPECT_EQ(r.s_phi_minus, (std::vector<double>{1, 1}));
  EXPECT_EQ(r.s_phi_plus, (std::vector<double>{0, 0}));

  const Matrix Zp{{0.5, 3}, {2, 2}}, Zn{{-1, 4}, {7, 0}};
  const DocumentSet one{{1}, 0, 0};
  for (const auto m : {PoolMode::min, PoolMode::max, PoolMode::mean, PoolMode::sum}) {
    const auto s = set_representations(one, Z, Zp, Zn, Pooling{m, m});
    EXPECT_EQ(s.s_phi_minus, (std::vector<double>{0, 1}));
    EXPECT_EQ(s.s_phi_plus, (std::vector<double>{0, 1}));
    EXPECT_EQ(s.s_plus, (std::vector<double>{2, 2}));
    EXPECT_EQ(s.s_minus, (std::vector<double>{7, 0}));
  }
  const Matrix M{{2, 2}, {0, 0}};
  EXPECT_EQ(set_representations(both, M, M, M, Pooling{PoolMode::mean, PoolMode::mean}).s_plus,
            (std::vector<double>{1, 1}));
  EXPECT_THROW(set_representations(DocumentSet{{5}, 0, 0}, Z, Z, Z), ShapeError);
}

TEST(SetwiseInfoNce, SingleSetIsZero) {
  const SetRepresentation r{{1, 2}, {0.5, 1}, {3, 1}, {1, 1}};
  EXPECT_EQ(setwise_infonce({r}, 0.2), 0.0);
}

TEST(SetwiseInfoNce, TwoSetClosedForm) {
  const SetRepresentation r{{1, 0}, {1, 0}, {0, 1}, {1, 0}};
  EXPECT_NEAR(setwise_infonce({r, r}, 0.2), 2.0 * std::log1p(std::exp(-5.0)), 1e-15);
  EXPECT_NEAR(setwise_infonce({r, r}, 0.2), 0.0134, 1e-4);
}

TEST(SetwiseInfoNce, NonNegativeAndMonotone) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<SetRepresentation> reps(4);
    for (auto& r : reps) {
      for (auto* v : {&r.s_phi_minus, &r.s_phi_plus, &r.s_minus, &r.s_plus}) {
        v->resize(3);
        for (auto& x : *v) x = rng.normal();
      }
    }
    const double base = setwise_infonce(reps, 0.5);
    EXPECT_GE(base, 0.0);
    // Moving s_plus onto s_phi_plus raises that set's positive similarity.
    auto closer = reps;
    for (std::size_t t = 0; t < 3; ++t)
      closer[1].s_plus[t] = 0.5 * (closer[1].s_plus[t] + closer[1].s_phi_plus[t] *
                                                             diffnet::norm(closer[1].s_plus) /
                                                             diffnet::norm(closer[1].s_phi_plus));
    if (diffnet::cosine_sim_tau(closer[1].s_phi_plus, closer[1].s_plus, 1) >
        diffnet::cosine_sim_tau(reps[1].s_phi_plus, reps[1].s_plus, 1)) {
      EXPECT_LT(setwise_infonce(closer, 0.5), base);
    }
    // With two sets, set 1's negative view enters only set 0's denominator;
    // moving it onto set 0's anchor raises that negative similarity.
    const std::vector<SetRepresentation> pair{reps[0], reps[2]};
    auto harder = pair;
    for (std::size_t t = 0; t < 3; ++t)
      harder[1].s_minus[t] = 0.5 * (harder[1].s_minus[t] + harder[0].s_phi_minus[t] *
                                                               diffnet::norm(harder[1].s_minus) /
                                                               diffnet::norm(harder[0].s_phi_minus));
    if (diffnet::cosine_sim_tau(harder[0].s_phi_minus, harder[1].s_minus, 1) >
        diffnet::cosine_sim_tau(pair[0].s_phi_minus, pair[1].s_minus, 1)) {
      EXPECT_GT(setwise_infonce(harder, 0.5), setwise_infonce(pair, 0.5));
    }
  }
}

TEST(SetwiseInfoNce, OwnNegativeSwitch) {
  const SetRepresentation r{{1, 0}, {1, 0}, {1, 0}, {1, 0}};
  const double without = setwise_infonce({r, r}, 1.0, false);
  const double with = setwise_infonce({r, r}, 1.0, true);
  EXPECT_NEAR(without, 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(with, 2.0 * std::log(3.0), 1e-15);
}

TEST(SetwiseInfoNce, ReducesToInstanceWise) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 2 + rng.below(15), T = 2 + rng.below(6);
    const auto Z = random_matrix(B, T, rng), Zp = random_matrix(B, T, rng),
               Zn = random_matrix(B, T, rng);
    const auto sets = build_sets(build_index_matrix(B, 1, rng), 1);
    const double tau = 0.2;
    EXPECT_NEAR(setwise_infonce(reps_of(sets, Z, Zp, Zn), tau), instance_infonce(Z, Zp, Zn, tau),
                1e-10);
    EXPECT_NEAR(setwise_infonce_backward(sets, Z, Zp, Zn, tau).loss, instance_infonce(Z, Zp, Zn, tau),
                1e-10);
  }
}

TEST(SetwiseInfoNce, BackwardMatchesFiniteDifferences) {
  Rng rng(33);
  for (const auto pooling : {Pooling{}, Pooling{PoolMode::mean, PoolMode::sum},
                             Pooling{PoolMode::max, PoolMode::min}}) {
    for (const bool own : {false, true}) {
      const std::size_t B = 9, T = 5;
      const auto sets = build_sets(build_index_matrix(B, 3, rng), 3);
      const double tau = 0.3;
      const diffnet::LossWithGrad f = [&](std::span<const double> p, std::vector<double>* g) {
        const Matrix Z(B, T, std::vector<double>(p.begin(), p.begin() + B * T));
        const Matrix Zp(B, T, std::vector<double>(p.begin() + B * T, p.begin() + 2 * B * T));
        const Matrix Zn(B, T, std::vector<double>(p.begin() + 2 * B * T, p.end()));
        const auto r = setwise_infonce_backward(sets, Z, Zp, Zn, tau, pooling, own);
        if (g) {
          *g = r.dZ.data();
          g->insert(g->end(), r.dZp.data().begin(), r.dZp.data().end());
          g->insert(g->end(), r.dZn.data().begin(), r.dZn.data().end());
          EXPECT_NEAR(r.loss, setwise_infonce(reps_of(sets, Z, Zp, Zn, pooling), tau, own), 1e-10);
        }
        return r.loss;
      };
      std::vector<double> p(3 * B * T);
      for (auto& v : p) v = rng.normal();
      EXPECT_LT(diffnet::grad_check(f, p, 1e-5, 100, 5), 1e-4);
    }
  }
}
