#pragma once

// Built-in correctness checks: finite-difference gradient checks of the full
// model and the min-norm solver against its grid oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "paretopic/corpus.hpp"
#include "paretopic/diffnet.hpp"
#include "paretopic/moo.hpp"
#include "paretopic/ntm.hpp"
#include "paretopic/rng.hpp"
#include "paretopic/setcl.hpp"

namespace paretopic::selftest {

using diffnet::Matrix;

struct GradFixtureSpec {
  std::size_t V = 50, T = 8, H = 16, B = 12, K = 3, S = 2;
  double tau = 0.2;
  double init_scale = 0.5;
  std::uint64_t seed = 1;
};

// A random model, three random bag-of-words views, fixed noise and a fixed
// index matrix: everything the two losses need, frozen.
struct GradFixture {
  GradFixtureSpec spec;
  ntm::ModelState model;
  std::vector<BowDocument> x, xp, xn;
  Matrix eps_x, eps_p, eps_n;
  std::vector<setcl::DocumentSet> sets;
};

inline BowDocument random_bow(std::size_t V, Rng& rng) {
  std::unordered_map<WordId, std::uint32_t> counts;
  const std::size_t distinct = 3 + rng.below(std::min<std::size_t>(V, 10));
  for (std::size_t k = 0; k < distinct; ++k) {
    counts[static_cast<WordId>(rng.below(V))] += 1 + static_cast<std::uint32_t>(rng.below(3));
  }
  return BowDocument::from_map(counts);
}

inline GradFixture make_grad_fixture(const GradFixtureSpec& spec) {
  GradFixture f;
  f.spec = spec;
  Rng rng(spec.seed);
  f.model = {ntm::EncoderParams::zeros(spec.V, spec.H, spec.T),
             ntm::DecoderParams::zeros(spec.T, spec.V)};
  auto fill = [&](const char*, Matrix& m) {
    for (auto& v : m.data()) v = rng.uniform(-spec.init_scale, spec.init_scale);
  };
  f.model.enc.for_each(fill);
  f.model.dec.for_each(fill);
  for (std::size_t i = 0; i < spec.B; ++i) {
    f.x.push_back(random_bow(spec.V, rng));
    f.xp.push_back(random_bow(spec.V, rng));
    f.xn.push_back(random_bow(spec.V, rng));
  }
  auto normal = [&] {
    Matrix m(spec.B, spec.T);
    for (auto& v : m.data()) v = rng.normal();
    return m;
  };
  f.eps_x = normal();
  f.eps_p = normal();
  f.eps_n = normal();
  f.sets = setcl::build_sets(setcl::build_index_matrix(spec.B, spec.S, rng), spec.K);
  return f;
}

inline std::vector<double> fixture_params(const GradFixture& f) {
  auto p = ntm::flatten(f.model.enc).values;
  const auto d = ntm::flatten(f.model.dec).values;
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

namespace detail {

inline ntm::ModelState unpack(const GradFixture& f, std::span<const double> params) {
  ntm::ModelState m = f.model;
  const auto ne = ntm::num_params(m.enc);
  ntm::unflatten(params.subspan(0, ne), m.enc);
  ntm::unflatten(params.subspan(ne), m.dec);
  return m;
}

inline void pack(const ntm::EncoderParams& ge, const ntm::DecoderParams& gd,
                 std::vector<double>& out) {
  out = ntm::flatten(ge).values;
  const auto d = ntm::flatten(gd).values;
  out.insert(out.end(), d.begin(), d.end());
}

inline ntm::EncodedBatch encode_view(const std::vector<BowDocument>& docs, std::size_t V,
                                     const ntm::EncoderParams& enc, const Matrix& eps) {
  std::vector<const BowDocument*> ptrs;
  for (const auto& d : docs) ptrs.push_back(&d);
  return ntm::encode_batch(ntm::make_batch(ptrs, V), enc, eps);
}

}  // namespace detail

// Batch-mean ELBO as a function of all encoder and decoder parameters.
inline diffnet::LossWithGrad elbo_loss(const GradFixture& f) {
  return [&f](std::span<const double> params, std::vector<double>* grad) {
    const auto m = detail::unpack(f, params);
    const auto e = detail::encode_view(f.x, f.spec.V, m.enc, f.eps_x);
    if (!grad) return ntm::elbo_forward_backward(e, m.enc, m.dec, nullptr, nullptr).loss;
    auto ge = ntm::zeros_like(m.enc);
    auto gd = ntm::zeros_like(m.dec);
    const double loss = ntm::elbo_forward_backward(e, m.enc, m.dec, &ge, &gd).loss;
    detail::pack(ge, gd, *grad);
    return loss;
  };
}

// Setwise InfoNCE over the fixture's sets as a function of all parameters.
// The decoder does not enter the loss, so its gradient block is zero.
inline diffnet::LossWithGrad infonce_loss(const GradFixture& f) {
  return [&f](std::span<const double> params, std::vector<double>* grad) {
    const auto m = detail::unpack(f, params);
    const auto ex = detail::encode_view(f.x, f.spec.V, m.enc, f.eps_x);
    const auto ep = detail::encode_view(f.xp, f.spec.V, m.enc, f.eps_p);
    const auto en = detail::encode_view(f.xn, f.spec.V, m.enc, f.eps_n);
    const auto r = setcl::setwise_infonce_backward(f.sets, ex.z, ep.z, en.z, f.spec.tau);
    if (grad) {
      auto ge = ntm::zeros_like(m.enc);
      const Matrix none;
      ntm::encoder_backward(ex, m.enc, r.dZ, none, none, ge);
      ntm::encoder_backward(ep, m.enc, r.dZp, none, none, ge);
      ntm::encoder_backward(en, m.enc, r.dZn, none, none, ge);
      detail::pack(ge, ntm::zeros_like(m.dec), *grad);
    }
    return r.loss;
  };
}

struct GradCheckReport {
  double elbo_max_rel = 0.0;
  double infonce_max_rel = 0.0;
};

inline GradCheckReport run_grad_checks(const GradFixtureSpec& spec, std::size_t n_probes = 100,
                                       double h = 1e-5) {
  const auto f = make_grad_fixture(spec);
  const auto params = fixture_params(f);
  GradCheckReport r;
  r.elbo_max_rel = diffnet::grad_check(elbo_loss(f), params, h, n_probes, spec.seed + 101);
  r.infonce_max_rel = diffnet::grad_check(infonce_loss(f), params, h, n_probes, spec.seed + 202);
  return r;
}

struct SolverOracleReport {
  std::size_t pairs = 0;
  std::size_t interior = 0;
  double max_alpha_gap = 0.0;      // |alpha_min_norm − grid oracle|
  double max_kkt_residual = 0.0;   // over interior solutions
  double max_norm_excess = 0.0;    // max(0, ‖d‖ − min(‖g1‖, ‖g2‖))
};

// Random gradient pairs with dimensions in [2, 1000] and independent scales,
// plus hand-built collinear, opposite and orthogonal cases.
inline std::vector<std::pair<std::vector<double>, std::vector<double>>> solver_pairs(
    std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> out;
  out.push_back({{1.0, 0.0}, {3.0, 0.0}});
  out.push_back({{1.0, 0.0}, {-1.0, 0.0}});
  out.push_back({{1.0, 0.0}, {0.0, 1.0}});
  while (out.size() < n) {
    const std::size_t dim = 2 + rng.below(999);
    const double s1 = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    const double s2 = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    const double inv = 1.0 / std::sqrt(static_cast<double>(dim));
    std::vector<double> g1(dim), g2(dim);
    for (auto& v : g1) v = s1 * inv * rng.normal();
    for (auto& v : g2) v = s2 * inv * rng.normal();
    out.emplace_back(std::move(g1), std::move(g2));
  }
  return out;
}

inline SolverOracleReport run_solver_oracle(std::size_t n_pairs = 1000, std::size_t steps = 10000,
                                            std::uint64_t seed = 7) {
  SolverOracleReport r;
  for (const auto& [g1, g2] : solver_pairs(n_pairs, seed)) {
    ++r.pairs;
    const double a = moo::alpha_min_norm(g1, g2);
    r.max_alpha_gap = std::max(r.max_alpha_gap, std::abs(a - moo::alpha_grid_oracle(g1, g2, steps)));
    const auto d = moo::blend(g1, g2, a);
    const double dd = diffnet::dot(d, d);
    if (a > 0.0 && a < 1.0) {
      ++r.interior;
      r.max_kkt_residual = std::max({r.max_kkt_residual, std::abs(diffnet::dot(d, g1) - dd),
                                     std::abs(diffnet::dot(d, g2) - dd)});
    }
    const double bound = std::min(diffnet::norm(g1), diffnet::norm(g2));
    r.max_norm_excess = std::max(r.max_norm_excess, std::sqrt(dd) - bound);
  }
  return r;
}

struct Outcome {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace detail

inline std::vector<Outcome> run_all() {
  std::vector<Outcome> out;
  const auto g = run_grad_checks(GradFixtureSpec{});
  out.push_back({"elbo gradient", g.elbo_max_rel <= 1e-4,
                 "max relative error " + detail::sci(g.elbo_max_rel)});
  out.push_back({"infonce gradient", g.infonce_max_rel <= 1e-4,
                 "max relative error " + detail::sci(g.infonce_max_rel)});
  const auto s = run_solver_oracle();
  out.push_back({"min-norm vs grid oracle", s.max_alpha_gap <= 1e-4,
                 "max |alpha gap| " + detail::sci(s.max_alpha_gap)});
  out.push_back({"min-norm stationarity", s.max_kkt_residual <= 1e-8,
                 "max residual " + detail::sci(s.max_kkt_residual) + " over " +
                     std::to_string(s.interior) + " interior solutions"});
  out.push_back({"min-norm bound", s.max_norm_excess <= 0.0,
                 "max excess " + detail::sci(s.max_norm_excess)});
  return out;
}

inline bool report(const std::vector<Outcome>& outcomes, std::ostream& os) {
  bool ok = true;
  for (const auto& o : outcomes) {
    os << (o.pass ? "PASS " : "FAIL ") << o.name << ": " << o.detail << '\n';
    ok = ok && o.pass;
  }
  return ok;
}

}  // namespace paretopic::selftest
