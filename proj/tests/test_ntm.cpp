#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "paretopic/corpus.hpp"
#include "paretopic/ntm.hpp"
#include "paretopic/rng.hpp"
#include "paretopic/selftest.hpp"
#include "paretopic/setcl.hpp"

using namespace paretopic;
using namespace paretopic::ntm;
using diffnet::Matrix;

namespace {

BowDocument bow(std::vector<std::pair<WordId, std::uint32_t>> counts) {
  BowDocument d;
  d.counts = std::move(counts);
  return d;
}

ElboTerms elbo_of(const std::vector<BowDocument>& docs, const ModelState& m, const Matrix& eps) {
  std::vector<const BowDocument*> ptrs;
  for (const auto& d : docs) ptrs.push_back(&d);
  const auto e = encode_batch(make_batch(ptrs, m.vocab_size()), m.enc, eps);
  return elbo_forward_backward(e, m.enc, m.dec, nullptr, nullptr);
}

}  // namespace

TEST(Encode, ZeroNetwork) {
  const auto enc = EncoderParams::zeros(4, 3, 2);
  const auto e = encode(bow({{1, 2}, {3, 1}}), enc);
  EXPECT_EQ(e.mu, (std::vector<double>{0, 0}));
  EXPECT_EQ(e.logvar, (std::vector<double>{0, 0}));
}

TEST(Encode, HandComputedToy) {
  // V=2, H=1, T=1; x=(1,3) → x_norm=(0.25,0.75).
  auto enc = EncoderParams::zeros(2, 1, 1);
  enc.W1 = Matrix{{2.0}, {-1.0}};
  enc.b1 = Matrix{{0.5}};
  enc.W_mu = Matrix{{3.0}};
  enc.b_mu = Matrix{{-1.0}};
  const double a1 = 0.25 * 2.0 + 0.75 * -1.0 + 0.5;
  const double h = std::log1p(std::exp(a1));
  const auto e = encode(bow({{0, 1}, {1, 3}}), enc);
  EXPECT_NEAR(e.mu[0], 3.0 * h - 1.0, 1e-15);
  EXPECT_EQ(e.mu, encode(bow({{0, 1}, {1, 3}}), enc).mu);
}

TEST(Encode, EmptyDocumentRejected) {
  EXPECT_THROW(encode(BowDocument{}, EncoderParams::zeros(3, 2, 2)), DataError);
  EXPECT_THROW(encode(bow({{5, 1}}), EncoderParams::zeros(3, 2, 2)), DataError);
}

TEST(Encode, LogvarClamped) {
  auto enc = EncoderParams::zeros(2, 1, 1);
  enc.b_lv = Matrix{{50.0}};
  EXPECT_EQ(encode(bow({{0, 1}}), enc).logvar[0], 8.0);
  enc.b_lv = Matrix{{-50.0}};
  EXPECT_EQ(encode(bow({{0, 1}}), enc).logvar[0], -8.0);
}

TEST(Reparameterize, Examples) {
  const std::vector<double> mu{0.3, -1.2};
  EXPECT_EQ(reparameterize(mu, std::vector<double>{0.7, 2.0}, std::vector<double>{0, 0}), mu);
  const auto z = reparameterize(mu, std::vector<double>{0, 0}, std::vector<double>{1, 1});
  EXPECT_DOUBLE_EQ(z[0], 1.3);
  EXPECT_DOUBLE_EQ(z[1], -0.2);
  EXPECT_EQ(theta(std::vector<double>{0, 0}), (std::vector<double>{0.5, 0.5}));
}

TEST(Theta, StrictlyPositiveDistribution) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> z(7);
    for (auto& v : z) v = 20.0 * rng.normal();
    const auto th = theta(z);
    double s = 0;
    for (const double v : th) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(ReconstructionLoss, UniformPrediction) {
  const auto dec = DecoderParams::zeros(2, 2);
  EXPECT_NEAR(reconstruction_loss(bow({{0, 1}, {1, 1}}), std::vector<double>{0.5, 0.5}, dec),
              2.0 * std::numbers::ln2, 1e-15);
  const auto dec5 = DecoderParams::zeros(1, 5);
  EXPECT_NEAR(reconstruction_loss(bow({{0, 2}, {4, 3}}), std::vector<double>{1.0}, dec5),
              5.0 * std::log(5.0), 1e-12);
}

TEST(ReconstructionLoss, PerfectLimitAndLinearity) {
  auto dec = DecoderParams::zeros(1, 2);
  dec.b_dec = Matrix{{40.0, 0.0}};
  const double l = reconstruction_loss(bow({{0, 1}}), std::vector<double>{1.0}, dec);
  EXPECT_GE(l, 0.0);
  EXPECT_LT(l, 1e-15);
  Rng rng(6);
  auto d2 = DecoderParams::zeros(3, 4);
  for (auto& v : d2.beta.data()) v = rng.normal();
  const std::vector<double> th{0.2, 0.5, 0.3};
  EXPECT_NEAR(reconstruction_loss(bow({{0, 2}, {3, 4}}), th, d2),
              2.0 * reconstruction_loss(bow({{0, 1}, {3, 2}}), th, d2), 1e-12);
}

TEST(KlLoss, Examples) {
  EXPECT_EQ(kl_loss(std::vector<double>{0, 0}, std::vector<double>{0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(kl_loss(std::vector<double>{1, 0}, std::vector<double>{0, 0}), 0.5);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> mu(4), lv(4);
    for (auto& v : mu) v = 3.0 * rng.normal();
    for (auto& v : lv) v = rng.uniform(-8, 8);
    EXPECT_GE(kl_loss(mu, lv), 0.0);
  }
  EXPECT_GT(kl_loss(std::vector<double>{1e-5}, std::vector<double>{0}), 0.0);
}

TEST(Elbo, SingletonUniformBatch) {
  ModelState m{EncoderParams::zeros(2, 3, 2), DecoderParams::zeros(2, 2)};
  const auto t = elbo_of({bow({{0, 1}, {1, 1}})}, m, Matrix(1, 2));
  EXPECT_NEAR(t.loss, 2.0 * std::numbers::ln2, 1e-15);
  EXPECT_EQ(t.kl, 0.0);
}

TEST(Elbo, DuplicatedDocumentSameMean) {
  Rng rng(2);
  auto m = init_model(6, 4, 3, rng);
  const auto d = bow({{0, 2}, {4, 1}});
  const auto one = elbo_of({d}, m, Matrix(1, 3));
  const auto two = elbo_of({d, d}, m, Matrix(2, 3));
  EXPECT_NEAR(one.loss, two.loss, 1e-12);
  EXPECT_TRUE(std::isfinite(one.loss));
}

TEST(Elbo, FullModelGradientCheck) {
  const auto r = selftest::run_grad_checks(selftest::GradFixtureSpec{});
  EXPECT_LT(r.elbo_max_rel, 1e-4);
  EXPECT_LT(r.infonce_max_rel, 1e-4);
}

TEST(Elbo, GradientCheckAcrossSeeds) {
  for (std::uint64_t seed = 2; seed < 6; ++seed) {
    selftest::GradFixtureSpec spec;
    spec.seed = seed;
    spec.V = 20;
    spec.B = 6;
    spec.K = 2;
    spec.S = 3;
    const auto r = selftest::run_grad_checks(spec, 60);
    EXPECT_LT(r.elbo_max_rel, 1e-4) << seed;
    EXPECT_LT(r.infonce_max_rel, 1e-4) << seed;
  }
}

TEST(InitModel, DeterministicAndBounded) {
  Rng a(5), b(5);
  const auto m1 = init_model(10, 4, 3, a);
  const auto m2 = init_model(10, 4, 3, b);
  EXPECT_TRUE(m1 == m2);
  for (const double v : m1.enc.W1.data()) EXPECT_LE(std::abs(v), kInitScale);
  for (const double v : m1.enc.b1.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(init_model(0, 4, 3, a), ConfigError);
}

TEST(TopWords, ArgmaxAndTies) {
  auto dec = DecoderParams::zeros(1, 2);
  dec.beta = Matrix{{0.1, 0.9}};
  EXPECT_EQ(top_words(dec, 1).topics[0], (std::vector<WordId>{1}));

  auto tied = DecoderParams::zeros(1, 3);
  tied.beta = Matrix{{0.5, 0.5, 0.5}};
  const Vocabulary v({"zeta", "alpha", "mid"}, {1, 1, 1});
  EXPECT_EQ(top_words(tied, 3, &v).topics[0], (std::vector<WordId>{1, 2, 0}));
  EXPECT_EQ(top_words(tied, 3).topics[0], (std::vector<WordId>{0, 1, 2}));
  EXPECT_THROW(top_words(tied, 4), ConfigError);
}

TEST(TopWords, FullVocabularyIsPermutation) {
  Rng rng(4);
  auto dec = DecoderParams::zeros(3, 12);
  for (auto& v : dec.beta.data()) v = rng.normal();
  const auto tl = top_words(dec, 12);
  for (const auto& t : tl.topics) {
    auto s = t;
    std::sort(s.begin(), s.end());
    for (WordId w = 0; w < 12; ++w) EXPECT_EQ(s[w], w);
  }
}
