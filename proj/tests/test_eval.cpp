#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "paretopic/eval.hpp"
#include "paretopic/rng.hpp"
#include "test_util.hpp"

using namespace paretopic;
using namespace paretopic::eval;

namespace {

BowDocument doc_of(std::initializer_list<WordId> words) {
  std::unordered_map<WordId, std::uint32_t> m;
  for (auto w : words) m[w] += 1;
  return BowDocument::from_map(m);
}

TopicList topics_of(std::vector<std::vector<WordId>> t) {
  TopicList l;
  l.n = t.empty() ? 0 : t[0].size();
  l.topics = std::move(t);
  return l;
}

// Recount document frequencies by scanning every document.
double naive_npmi(const std::vector<WordId>& words, const std::vector<BowDocument>& docs, double eps) {
  const double D = static_cast<double>(docs.size());
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < words.size(); ++a) {
    for (std::size_t b = a + 1; b < words.size(); ++b) {
      double ca = 0, cb = 0, cab = 0;
      for (const auto& d : docs) {
        const bool ha = d.count_of(words[a]) > 0, hb = d.count_of(words[b]) > 0;
        ca += ha;
        cb += hb;
        cab += ha && hb;
      }
      double v = -1.0;
      if (ca > 0 && cb > 0) {
        const double pij = cab / D + eps;
        v = -std::log(pij) <= 0 ? 1.0 : std::log(pij / ((ca / D) * (cb / D))) / -std::log(pij);
        v = std::clamp(v, -1.0, 1.0);
      }
      sum += v;
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

std::vector<double> random_distribution(std::size_t n, Rng& rng, double zero_prob = 0.0) {
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) {
    v = rng.uniform() < zero_prob ? 0.0 : rng.uniform(0.01, 1.0);
    s += v;
  }
  if (s == 0.0) {
    p[0] = 1.0;
    return p;
  }
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

TEST(Npmi, PairExamples) {
  // Always together: perfect association.
  EXPECT_NEAR(npmi_pair(0.5, 0.5, 0.5), 1.0, 1e-9);
  // Independent occurrence.
  EXPECT_NEAR(npmi_pair(0.5, 0.5, 0.25), 0.0, 1e-9);
  // Never together tends to −1 as eps shrinks.
  EXPECT_LT(npmi_pair(0.5, 0.5, 0.0), -0.9);
  EXPECT_NEAR(npmi_pair(0.5, 0.5, 0.0, 1e-300), -1.0, 0.01);
  EXPECT_EQ(npmi_pair(0.0, 0.5, 0.0), -1.0);
  EXPECT_EQ(npmi_pair(1.0, 1.0, 1.0), 1.0);
}

TEST(Npmi, TopicExamples) {
  // Words 0,1 always together; 2 with 0 half the time; 3 never with 0.
  const std::vector<BowDocument> docs{doc_of({0, 1, 2}), doc_of({0, 1}), doc_of({2, 3}),
                                      doc_of({3})};
  const CooccurrenceStats stats(docs, 4);
  EXPECT_EQ(stats.word_doc_freq(0), 2u);
  EXPECT_EQ(stats.pair_doc_freq(0, 1), 2u);
  EXPECT_EQ(stats.pair_doc_freq(0, 3), 0u);
  const auto r = npmi(topics_of({{0, 1}, {0, 2}}), stats);
  EXPECT_NEAR(r.per_topic[0], 1.0, 1e-9);
  EXPECT_NEAR(r.per_topic[1], 0.0, 1e-9);
  EXPECT_NEAR(r.mean, 0.5, 1e-9);
  EXPECT_THROW(npmi(topics_of({{0, 9}}), stats), DataError);
  EXPECT_THROW(npmi(topics_of({{0, 1}}), CooccurrenceStats({}, 4)), DataError);
}

TEST(Npmi, MatchesNaiveRecount) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t V = 12, D = 5 + rng.below(46);
    std::vector<BowDocument> docs;
    for (std::size_t d = 0; d < D; ++d) {
      std::unordered_map<WordId, std::uint32_t> m;
      for (WordId w = 0; w < V; ++w)
        if (rng.uniform() < 0.3) m[w] = 1 + static_cast<std::uint32_t>(rng.below(3));
      docs.push_back(BowDocument::from_map(m));
    }
    std::vector<WordId> ids(V);
    std::iota(ids.begin(), ids.end(), WordId{0});
    rng.shuffle(ids.begin(), ids.end());
    const auto topics = topics_of({{ids[0], ids[1], ids[2], ids[3]}, {ids[4], ids[5], ids[6], ids[7]}});
    const auto r = npmi(topics, CooccurrenceStats(docs, V));
    for (std::size_t t = 0; t < 2; ++t) {
      EXPECT_NEAR(r.per_topic[t], naive_npmi(topics.topics[t], docs, kDefaultNpmiEps), 1e-12);
      EXPECT_GE(r.per_topic[t], -1.0);
      EXPECT_LE(r.per_topic[t], 1.0);
    }
  }
}

TEST(TopicDiversity, Examples) {
  EXPECT_DOUBLE_EQ(topic_diversity(topics_of({{0, 1}, {2, 3}})), 1.0);
  EXPECT_DOUBLE_EQ(topic_diversity(topics_of({{0, 1}, {0, 1}, {0, 1}})), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(topic_diversity(topics_of({{0, 1, 2, 3}, {0, 1, 4, 5}})), 0.75);
  EXPECT_THROW(topic_diversity(topics_of({})), DataError);
}

TEST(Topics, SaveLoadAndValidation) {
  testutil::TempDir dir;
  const Vocabulary vocab({"alpha", "beta", "gamma", "delta"}, {1, 1, 1, 1});
  const auto t = topics_of({{2, 0}, {1, 3}});
  save_topics(t, vocab, dir.file("t.txt"));
  EXPECT_EQ(testutil::read_file(dir.file("t.txt")), "gamma alpha\nbeta delta\n");
  const auto back = load_topics(dir.file("t.txt"), vocab);
  EXPECT_EQ(back.topics, t.topics);
  EXPECT_EQ(back.n, 2u);

  testutil::write_file(dir.file("oov.txt"), "alpha beta\ngamma omega\n");
  try {
    load_topics(dir.file("oov.txt"), vocab);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("omega"), std::string::npos);
  }
  testutil::write_file(dir.file("ragged.txt"), "alpha beta\ngamma\n");
  EXPECT_THROW(load_topics(dir.file("ragged.txt"), vocab), DataError);
  testutil::write_file(dir.file("dup.txt"), "alpha alpha\n");
  EXPECT_THROW(load_topics(dir.file("dup.txt"), vocab), DataError);
  testutil::write_file(dir.file("empty.txt"), "\n");
  EXPECT_THROW(load_topics(dir.file("empty.txt"), vocab), DataError);
}

TEST(JsDivergence, Examples) {
  const std::vector<double> p{0.5, 0.5, 0.0}, q{0.0, 0.0, 1.0}, r{1.0, 0.0, 0.0};
  EXPECT_DOUBLE_EQ(js_divergence(p, p), 0.0);
  EXPECT_NEAR(js_divergence(p, q), std::numbers::ln2, 1e-15);
  // m = (0.75, 0.25, 0): 0.5·ln(1/0.75) + 0.5·(0.5 ln(0.5/0.75) + 0.5 ln(0.5/0.25)).
  const double expected = 0.5 * std::log(1.0 / 0.75) +
                          0.5 * (0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25));
  EXPECT_NEAR(js_divergence(p, r), expected, 1e-15);
  EXPECT_THROW(js_divergence(p, std::vector<double>{0.5, 0.5}), DataError);
  EXPECT_THROW(js_divergence(p, std::vector<double>{0.5, 0.6, 0.0}), DataError);
  EXPECT_THROW(js_divergence(p, std::vector<double>{1.5, -0.5, 0.0}), DataError);
}

TEST(JsDivergence, SymmetricAndBounded) {
  Rng rng(9);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 2 + rng.below(20);
    const auto p = random_distribution(n, rng, 0.3);
    const auto q = random_distribution(n, rng, 0.3);
    const double a = js_divergence(p, q), b = js_divergence(q, p);
    EXPECT_NEAR(a, b, 1e-15);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, std::numbers::ln2);
  }
}

TEST(AlignTopics, Examples) {
  const std::vector<std::vector<double>> A{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  const std::vector<std::vector<double>> B{{0, 0, 1}, {0.9, 0.1, 0}};
  const auto m = align_topics(A, B, 0.5);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0].i, 2u);
  EXPECT_EQ(m[0].j, 0u);
  EXPECT_DOUBLE_EQ(m[0].js, 0.0);
  EXPECT_EQ(m[1].i, 0u);
  EXPECT_EQ(m[1].j, 1u);
  EXPECT_TRUE(align_topics(A, B, -1.0).empty());
  EXPECT_EQ(align_topics(A, B, 0.0).size(), 1u);
  EXPECT_THROW(align_topics(A, {{0.5, 0.5}}), DataError);
}

TEST(AlignTopics, MatchingProperties) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<double>> A, B;
    const std::size_t na = 1 + rng.below(6), nb = 1 + rng.below(6), V = 2 + rng.below(8);
    for (std::size_t i = 0; i < na; ++i) A.push_back(random_distribution(V, rng, 0.4));
    for (std::size_t j = 0; j < nb; ++j) B.push_back(random_distribution(V, rng, 0.4));
    const double threshold = rng.uniform(0.0, std::numbers::ln2);
    const auto m = align_topics(A, B, threshold);
    std::set<std::size_t> ui, uj;
    for (std::size_t k = 0; k < m.size(); ++k) {
      EXPECT_TRUE(ui.insert(m[k].i).second);
      EXPECT_TRUE(uj.insert(m[k].j).second);
      EXPECT_LE(m[k].js, threshold);
      EXPECT_DOUBLE_EQ(m[k].js, js_divergence(A[m[k].i], B[m[k].j]));
      if (k) {
        EXPECT_LE(m[k - 1].js, m[k].js);
      }
    }
    // Maximal: no unmatched pair is still under the threshold.
    for (std::size_t i = 0; i < na; ++i)
      for (std::size_t j = 0; j < nb; ++j)
        if (!ui.count(i) && !uj.count(j)) {
          EXPECT_GT(js_divergence(A[i], B[j]), threshold);
        }
  }
}

// Greedy linking yields the perfect matching whose ascending cost sequence is
// lexicographically smallest (costs distinct, threshold inactive).
TEST(AlignTopics, GreedyIsLexMinMatching) {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(3), V = 6;
    std::vector<std::vector<double>> A, B;
    for (std::size_t i = 0; i < n; ++i) A.push_back(random_distribution(V, rng));
    for (std::size_t j = 0; j < n; ++j) B.push_back(random_distribution(V, rng));
    const auto m = align_topics(A, B, std::numbers::ln2);
    ASSERT_EQ(m.size(), n);
    std::vector<double> greedy;
    for (const auto& a : m) greedy.push_back(a.js);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::vector<double> best;
    do {
      std::vector<double> costs;
      for (std::size_t i = 0; i < n; ++i) costs.push_back(js_divergence(A[i], B[perm[i]]));
      std::sort(costs.begin(), costs.end());
      if (best.empty() || costs < best) best = costs;
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (std::size_t k = 0; k < n; ++k) EXPECT_NEAR(greedy[k], best[k], 1e-15);
  }
}

TEST(TopicDistributions, RowsAreSoftmax) {
  auto dec = ntm::DecoderParams::zeros(2, 3);
  dec.beta = diffnet::Matrix(2, 3, std::vector<double>{0, 0, 0, std::log(2.0), 0, 0});
  const auto d = topic_distributions(dec);
  EXPECT_NEAR(d[0][0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(d[1][0], 0.5, 1e-15);
  EXPECT_NEAR(d[1][2], 0.25, 1e-15);
}

TEST(MacroF1, Examples) {
  EXPECT_DOUBLE_EQ(macro_f1({0, 1, 2}, {0, 1, 2}), 1.0);
  EXPECT_NEAR(macro_f1({0, 0, 1, 1}, {0, 1, 1, 1}), (2.0 / 3.0 + 0.8) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(macro_f1({0, 0}, {1, 1}), 0.0);
  EXPECT_THROW(macro_f1({0}, {0, 1}), DataError);
}

TEST(Classify, SeparableDataScoresPerfectly) {
  Rng rng(4);
  const std::size_t n = 300;
  diffnet::Matrix X(n, 3);
  std::vector<std::optional<std::string>> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % 3;
    for (std::size_t k = 0; k < 3; ++k) X(i, k) = (k == c ? 5.0 : 0.0) + 0.1 * rng.normal();
    labels.push_back("c" + std::to_string(c));
  }
  labels[7].reset();
  const auto rep = classify(X, labels, 0.2, 1);
  EXPECT_EQ(rep.num_classes, 3u);
  EXPECT_EQ(rep.train_size + rep.test_size, n - 1);
  EXPECT_EQ(rep.test_size, 60u);
  EXPECT_EQ(rep.class_names, (std::vector<std::string>{"c0", "c1", "c2"}));
  EXPECT_DOUBLE_EQ(rep.macro_f1, 1.0);
}

TEST(Classify, NoiseScoresNearChance) {
  Rng rng(8);
  const std::size_t n = 900;
  diffnet::Matrix X(n, 4);
  std::vector<std::optional<std::string>> labels;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 4; ++k) X(i, k) = rng.normal();
    labels.push_back("c" + std::to_string(rng.below(3)));
  }
  const auto rep = classify(X, labels, 0.3, 2);
  EXPECT_LT(rep.macro_f1, 0.5);
  EXPECT_THROW(classify(X, std::vector<std::optional<std::string>>(n), 0.3, 2), DataError);
}

TEST(FeaturesCsv, Shape) {
  testutil::TempDir dir;
  const diffnet::Matrix th(2, 3, std::vector<double>{0.5, 0.25, 0.25, 1, 0, 0});
  write_features_csv(th, {std::string("sci,space"), std::nullopt}, dir.file("f.csv"));
  EXPECT_EQ(testutil::read_file(dir.file("f.csv")),
            "theta_0,theta_1,theta_2,label\n0.5,0.25,0.25,\"sci,space\"\n1,0,0,\n");
}

TEST(DocumentThetas, RowsAreDistributions) {
  Rng rng(2);
  const auto model = ntm::init_model(10, 6, 4, rng);
  const std::vector<BowDocument> docs{doc_of({0, 1, 1}), doc_of({9}), BowDocument{}};
  const auto th = document_thetas(docs, model.enc);
  ASSERT_EQ(th.rows(), 3u);
  for (std::size_t d = 0; d < 3; ++d) {
    const auto r = th.row(d);
    EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0, 1e-12);
  }
  for (std::size_t t = 0; t < 4; ++t) EXPECT_DOUBLE_EQ(th(2, t), 0.25);
  EXPECT_EQ(ntm::theta_mean_path(docs[0], model.enc), std::vector<double>(th.row(0).begin(), th.row(0).end()));
}

TEST(SimilarityProbe, Properties) {
  Rng rng(12);
  const auto model = ntm::init_model(10, 6, 4, rng);
  const Vocabulary vocab({"aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh", "ii", "jj"},
                         std::vector<std::uint32_t>(10, 1));
  EXPECT_NEAR(similarity_probe("aa bb cc", "aa bb cc", model.enc, vocab), 1.0, 1e-12);
  for (int i = 0; i < 50; ++i) {
    auto a = doc_of({static_cast<WordId>(rng.below(10)), static_cast<WordId>(rng.below(10))});
    auto b = doc_of({static_cast<WordId>(rng.below(10))});
    const double s = similarity_probe(a, b, model.enc);
    EXPECT_NEAR(s, similarity_probe(b, a, model.enc), 1e-15);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  EXPECT_THROW(similarity_probe("zz yy", "aa", model.enc, vocab), DataError);
}

TEST(MetricsJson, Fields) {
  const auto j = metrics_json({{0.1, 0.3}, 0.2}, 0.75, 2);
  EXPECT_EQ(j["npmi"], 0.2);
  EXPECT_EQ(j["td"], 0.75);
  EXPECT_EQ(j["num_topics"], 2);
  EXPECT_EQ(j["npmi_per_topic"].size(), 2u);
}
