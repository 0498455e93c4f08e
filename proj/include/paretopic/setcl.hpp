#pragma once

// Setwise contrastive objective: shuffled index rows, K-document sets,
// polarity-specific pooling of topic vectors and the set-level InfoNCE loss.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "paretopic/diffnet.hpp"
#include "paretopic/error.hpp"
#include "paretopic/rng.hpp"

namespace paretopic::setcl {

using diffnet::Matrix;
using diffnet::PoolMode;

// S rows, each a permutation of 0..B-1. Row 0 is the identity.
struct IndexMatrix {
  std::size_t S = 0;
  std::size_t B = 0;
  std::vector<std::vector<std::size_t>> rows;
};

inline IndexMatrix build_index_matrix(std::size_t B, std::size_t S, Rng& rng) {
  if (B < 1 || S < 1) {
    throw ConfigError("build_index_matrix: B and S must be >= 1 (got B=" + std::to_string(B) +
                      ", S=" + std::to_string(S) + ")");
  }
  IndexMatrix m{S, B, {}};
  std::vector<std::size_t> identity(B);
  std::iota(identity.begin(), identity.end(), std::size_t{0});
  m.rows.push_back(identity);
  for (std::size_t s = 1; s < S; ++s) {
    auto row = identity;
    rng.shuffle(row.begin(), row.end());
    m.rows.push_back(std::move(row));
  }
  return m;
}

inline IndexMatrix build_index_matrix(std::size_t B, std::size_t S, std::uint64_t seed) {
  Rng rng(seed);
  return build_index_matrix(B, S, rng);
}

struct DocumentSet {
  std::vector<std::size_t> members;  // batch positions
  std::size_t row = 0;               // shuffle row
  std::size_t column = 0;            // block within the row
};

// Consecutive blocks of K within each row; the B mod K leftover positions of
// a row are dropped. Yields S·⌊B/K⌋ sets.
inline std::vector<DocumentSet> build_sets(const IndexMatrix& m, std::size_t K) {
  if (K < 1 || K > m.B) {
    throw ConfigError("build_sets: set size K=" + std::to_string(K) +
                      " must be in [1, B] with batch size B=" + std::to_string(m.B));
  }
  std::vector<DocumentSet> sets;
  const std::size_t per_row = m.B / K;
  sets.reserve(m.S * per_row);
  for (std::size_t s = 0; s < m.S; ++s) {
    for (std::size_t j = 0; j < per_row; ++j) {
      DocumentSet set;
      set.row = s;
      set.column = j;
      set.members.assign(m.rows[s].begin() + static_cast<std::ptrdiff_t>(j * K),
                         m.rows[s].begin() + static_cast<std::ptrdiff_t>((j + 1) * K));
      sets.push_back(std::move(set));
    }
  }
  return sets;
}

struct Pooling {
  PoolMode positive = PoolMode::min;  // anchor and positive view, compared in the numerator
  PoolMode negative = PoolMode::max;  // anchor and negative view, compared in the denominator
};

struct SetRepresentation {
  std::vector<double> s_phi_minus;  // anchor pooled with the negative-side pooling
  std::vector<double> s_phi_plus;   // anchor pooled with the positive-side pooling
  std::vector<double> s_minus;      // negative view, negative-side pooling
  std::vector<double> s_plus;       // positive view, positive-side pooling
};

namespace detail {

struct PooledSet {
  diffnet::Pooled phi_minus, phi_plus, minus, plus;
};

inline void check_members(const DocumentSet& set, const Matrix& Z, const Matrix& Zp,
                          const Matrix& Zn) {
  if (set.members.empty()) throw ShapeError("set_representations: empty set");
  if (Z.cols() != Zp.cols() || Z.cols() != Zn.cols()) {
    throw ShapeError("set_representations: topic dimension mismatch between views");
  }
  for (const auto m : set.members) {
    if (m >= Z.rows() || m >= Zp.rows() || m >= Zn.rows()) {
      throw ShapeError("set_representations: missing topic vector for batch position " +
                       std::to_string(m));
    }
  }
}

inline PooledSet pool_set(const DocumentSet& set, const Matrix& Z, const Matrix& Zp,
                          const Matrix& Zn, const Pooling& pooling) {
  check_members(set, Z, Zp, Zn);
  return {diffnet::pool(Z, set.members, pooling.negative),
          diffnet::pool(Z, set.members, pooling.positive),
          diffnet::pool(Zn, set.members, pooling.negative),
          diffnet::pool(Zp, set.members, pooling.positive)};
}

}  // namespace detail

inline SetRepresentation set_representations(const DocumentSet& set, const Matrix& Z,
                                             const Matrix& Zp, const Matrix& Zn,
                                             const Pooling& pooling = {}) {
  auto p = detail::pool_set(set, Z, Zp, Zn, pooling);
  return {std::move(p.phi_minus.value), std::move(p.phi_plus.value), std::move(p.minus.value),
          std::move(p.plus.value)};
}

namespace detail {

// Per-set loss terms given similarity logits. For set a the candidates are
// its positive logit and the negative logits against every other set (and
// its own negative view when include_own is set).
struct LogitWeights {
  double loss = 0.0;
  std::vector<double> d_pos;             // ∂L/∂pos[a]
  std::vector<std::vector<double>> d_neg;  // ∂L/∂neg[a][b]
};

inline LogitWeights infonce_from_logits(const std::vector<double>& pos,
                                        const std::vector<std::vector<double>>& neg,
                                        bool include_own) {
  const std::size_t n = pos.size();
  LogitWeights w;
  w.d_pos.assign(n, 0.0);
  w.d_neg.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    double m = pos[a];
    for (std::size_t b = 0; b < n; ++b)
      if (b != a || include_own) m = std::max(m, neg[a][b]);
    double denom = std::exp(pos[a] - m);
    for (std::size_t b = 0; b < n; ++b)
      if (b != a || include_own) denom += std::exp(neg[a][b] - m);
    const double lse = m + std::log(denom);
    w.loss += lse - pos[a];
    w.d_pos[a] = std::exp(pos[a] - lse) - 1.0;
    for (std::size_t b = 0; b < n; ++b)
      if (b != a || include_own) w.d_neg[a][b] = std::exp(neg[a][b] - lse);
  }
  return w;
}

}  // namespace detail

// L = −Σ_a log[ e^{f(φ⁺_a, s⁺_a)} / (e^{f(φ⁺_a, s⁺_a)} + Σ_{b≠a} e^{f(φ⁻_a, s⁻_b)}) ]
// with f the temperature-scaled cosine similarity. Summed, not averaged,
// over sets.
inline double setwise_infonce(const std::vector<SetRepresentation>& reps, double tau,
                              bool include_own_negative = false) {
  if (reps.empty()) throw ConfigError("setwise_infonce: need at least one set");
  const std::size_t n = reps.size();
  std::vector<double> pos(n);
  std::vector<std::vector<double>> neg(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    pos[a] = diffnet::cosine_sim_tau(reps[a].s_phi_plus, reps[a].s_plus, tau);
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a && !include_own_negative) continue;
      neg[a][b] = diffnet::cosine_sim_tau(reps[a].s_phi_minus, reps[b].s_minus, tau);
    }
  }
  return detail::infonce_from_logits(pos, neg, include_own_negative).loss;
}

struct InfoNceResult {
  double loss = 0.0;
  Matrix dZ, dZp, dZn;  // gradients w.r.t. the per-document topic vectors of each view
};

// Loss and its gradient with respect to the anchor, positive-view and
// negative-view topic vectors of the batch.
inline InfoNceResult setwise_infonce_backward(const std::vector<DocumentSet>& sets,
                                              const Matrix& Z, const Matrix& Zp,
                                              const Matrix& Zn, double tau,
                                              const Pooling& pooling = {},
                                              bool include_own_negative = false) {
  if (sets.empty()) throw ConfigError("setwise_infonce: need at least one set");
  if (!(tau > 0.0)) throw ConfigError("setwise_infonce: temperature must be positive");
  const std::size_t n = sets.size();
  const std::size_t T = Z.cols();

  std::vector<detail::PooledSet> pooled;
  pooled.reserve(n);
  for (const auto& s : sets) pooled.push_back(detail::pool_set(s, Z, Zp, Zn, pooling));

  // Cosine similarity is the dot product of unit vectors, scaled by 1/τ.
  std::vector<diffnet::Normalized> u_pm, u_pp, u_m, u_p;
  for (const auto& p : pooled) {
    u_pm.push_back(diffnet::normalize(p.phi_minus.value));
    u_pp.push_back(diffnet::normalize(p.phi_plus.value));
    u_m.push_back(diffnet::normalize(p.minus.value));
    u_p.push_back(diffnet::normalize(p.plus.value));
  }
  std::vector<double> pos(n);
  std::vector<std::vector<double>> neg(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a) {
    pos[a] = diffnet::dot(u_pp[a].unit, u_p[a].unit) / tau;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a && !include_own_negative) continue;
      neg[a][b] = diffnet::dot(u_pm[a].unit, u_m[b].unit) / tau;
    }
  }
  const auto w = detail::infonce_from_logits(pos, neg, include_own_negative);

  InfoNceResult r{w.loss, Matrix(Z.rows(), T), Matrix(Zp.rows(), T), Matrix(Zn.rows(), T)};
  std::vector<std::vector<double>> g_pm(n, std::vector<double>(T, 0.0)), g_pp = g_pm, g_m = g_pm,
      g_p = g_pm;
  for (std::size_t a = 0; a < n; ++a) {
    const double dp = w.d_pos[a] / tau;
    for (std::size_t t = 0; t < T; ++t) {
      g_pp[a][t] += dp * u_p[a].unit[t];
      g_p[a][t] += dp * u_pp[a].unit[t];
    }
    for (std::size_t b = 0; b < n; ++b) {
      const double dn = w.d_neg[a][b] / tau;
      if (dn == 0.0) continue;
      for (std::size_t t = 0; t < T; ++t) {
        g_pm[a][t] += dn * u_m[b].unit[t];
        g_m[b][t] += dn * u_pm[a].unit[t];
      }
    }
  }
  std::vector<double> up(T);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& members = sets[a].members;
    auto through = [&](const diffnet::Normalized& u, const std::vector<double>& g,
                       const diffnet::Pooled& p, PoolMode mode, Matrix& dst) {
      std::fill(up.begin(), up.end(), 0.0);
      diffnet::normalize_backward(u, g, up);
      diffnet::pool_backward(p, members, mode, up, dst);
    };
    through(u_pm[a], g_pm[a], pooled[a].phi_minus, pooling.negative, r.dZ);
    through(u_pp[a], g_pp[a], pooled[a].phi_plus, pooling.positive, r.dZ);
    through(u_m[a], g_m[a], pooled[a].minus, pooling.negative, r.dZn);
    through(u_p[a], g_p[a], pooled[a].plus, pooling.positive, r.dZp);
  }
  return r;
}

}  // namespace paretopic::setcl
