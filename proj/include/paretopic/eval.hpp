#pragma once

// Topic quality and downstream evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "paretopic/corpus.hpp"
#include "paretopic/diffnet.hpp"
#include "paretopic/error.hpp"
#include "paretopic/ntm.hpp"
#include "paretopic/rng.hpp"

namespace paretopic::eval {

using ntm::TopicList;

// Every topic must hold exactly n distinct in-vocabulary word ids.
inline void validate_topics(const TopicList& topics, std::size_t V) {
  for (std::size_t t = 0; t < topics.topics.size(); ++t) {
    const auto& words = topics.topics[t];
    if (words.size() != topics.n) {
      throw DataError("topic " + std::to_string(t) + " has " + std::to_string(words.size()) +
                      " words, expected " + std::to_string(topics.n));
    }
    std::set<WordId> seen;
    for (const auto w : words) {
      if (w >= V) {
        throw DataError("topic " + std::to_string(t) + " references word index " +
                        std::to_string(w) + " outside vocabulary of " + std::to_string(V));
      }
      if (!seen.insert(w).second) {
        throw DataError("topic " + std::to_string(t) + " repeats word index " + std::to_string(w));
      }
    }
  }
}

// One topic per line, words separated by single spaces.
inline void save_topics(const TopicList& topics, const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write topics file " + path);
  for (const auto& words : topics.topics) {
    for (std::size_t k = 0; k < words.size(); ++k) out << (k ? " " : "") << vocab.word(words[k]);
    out << '\n';
  }
}

inline TopicList load_topics(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read topics file " + path);
  TopicList topics;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::istringstream ls(line);
    std::vector<WordId> words;
    std::string w;
    while (ls >> w) {
      auto id = vocab.find(w);
      if (!id) {
        throw DataError(path + " line " + std::to_string(line_number) + ": word '" + w +
                        "' is not in the vocabulary");
      }
      words.push_back(*id);
    }
    if (words.empty()) continue;
    if (topics.topics.empty()) topics.n = words.size();
    topics.topics.push_back(std::move(words));
  }
  if (topics.topics.empty()) throw DataError("topics file " + path + " has no topics");
  validate_topics(topics, vocab.size());
  return topics;
}

// Document-level occurrence statistics of a reference corpus.
class CooccurrenceStats {
 public:
  CooccurrenceStats() = default;

  explicit CooccurrenceStats(const std::vector<BowDocument>& docs, std::size_t V)
      : doc_count_(docs.size()), postings_(V) {
    for (std::size_t d = 0; d < docs.size(); ++d) {
      for (const auto& [w, c] : docs[d].counts) {
        if (w >= V) throw DataError("CooccurrenceStats: word index out of range");
        postings_[w].push_back(static_cast<std::uint32_t>(d));
      }
    }
  }

  std::size_t doc_count() const { return doc_count_; }
  std::size_t vocab_size() const { return postings_.size(); }

  std::size_t word_doc_freq(WordId w) const { return postings_.at(w).size(); }

  std::size_t pair_doc_freq(WordId a, WordId b) const {
    const auto& pa = postings_.at(a);
    const auto& pb = postings_.at(b);
    std::size_t n = 0;
    auto i = pa.begin();
    auto j = pb.begin();
    while (i != pa.end() && j != pb.end()) {
      if (*i < *j) {
        ++i;
      } else if (*j < *i) {
        ++j;
      } else {
        ++n;
        ++i;
        ++j;
      }
    }
    return n;
  }

 private:
  std::size_t doc_count_ = 0;
  std::vector<std::vector<std::uint32_t>> postings_;
};

inline constexpr double kDefaultNpmiEps = 1e-12;

// NPMI of one word pair from document probabilities; −1 when either word
// never occurs, clamped to [−1, 1].
inline double npmi_pair(double p_i, double p_j, double p_ij, double eps = kDefaultNpmiEps) {
  if (p_i <= 0.0 || p_j <= 0.0) return -1.0;
  const double joint = p_ij + eps;
  const double denom = -std::log(joint);
  if (denom <= 0.0) return 1.0;
  const double v = std::log(joint / (p_i * p_j)) / denom;
  return std::clamp(v, -1.0, 1.0);
}

struct NpmiResult {
  std::vector<double> per_topic;
  double mean = 0.0;
};

inline NpmiResult npmi(const TopicList& topics, const CooccurrenceStats& stats,
                       double eps = kDefaultNpmiEps) {
  if (stats.doc_count() == 0) throw DataError("npmi: reference corpus is empty");
  if (!(eps > 0.0)) throw ConfigError("npmi: eps must be positive");
  validate_topics(topics, stats.vocab_size());
  const double D = static_cast<double>(stats.doc_count());
  NpmiResult r;
  for (const auto& words : topics.topics) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < words.size(); ++a) {
      for (std::size_t b = a + 1; b < words.size(); ++b) {
        const double pi = stats.word_doc_freq(words[a]) / D;
        const double pj = stats.word_doc_freq(words[b]) / D;
        const double pij = stats.pair_doc_freq(words[a], words[b]) / D;
        sum += npmi_pair(pi, pj, pij, eps);
        ++pairs;
      }
    }
    r.per_topic.push_back(pairs ? sum / static_cast<double>(pairs) : 0.0);
  }
  if (!r.per_topic.empty()) {
    r.mean = std::accumulate(r.per_topic.begin(), r.per_topic.end(), 0.0) /
             static_cast<double>(r.per_topic.size());
  }
  return r;
}

// Distinct words across all topics over N·T.
inline double topic_diversity(const TopicList& topics) {
  std::size_t total = 0;
  std::set<WordId> distinct;
  for (const auto& words : topics.topics) {
    total += words.size();
    distinct.insert(words.begin(), words.end());
  }
  if (total == 0) throw DataError("topic_diversity: no topic words");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

inline nlohmann::json metrics_json(const NpmiResult& n, double td, std::size_t num_topics) {
  return {{"npmi", n.mean}, {"npmi_per_topic", n.per_topic}, {"td", td}, {"num_topics", num_topics}};
}

namespace detail {

inline void check_distribution(std::span<const double> p, const char* name) {
  double s = 0.0;
  for (const double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw DataError(std::string("js_divergence: ") + name + " has a negative or non-finite entry");
    }
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) {
    throw DataError(std::string("js_divergence: ") + name + " sums to " + std::to_string(s));
  }
}

}  // namespace detail

// Jensen-Shannon divergence in nats, in [0, ln 2].
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DataError("js_divergence: distributions differ in length");
  detail::check_distribution(p, "p");
  detail::check_distribution(q, "q");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(js, 0.0, std::numbers::ln2);
}

// Topic-word distributions: row-wise softmax of beta.
inline std::vector<std::vector<double>> topic_distributions(const ntm::DecoderParams& dec) {
  const auto probs = diffnet::softmax(dec.beta);
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    out.emplace_back(probs.row(t).begin(), probs.row(t).end());
  }
  return out;
}

struct Alignment {
  std::size_t i = 0;
  std::size_t j = 0;
  double js = 0.0;
};

inline constexpr double kDefaultAlignThreshold = 0.5;

// Competitive linking: repeatedly links the globally lowest-JS pair of
// unmatched topics, stopping once the lowest remaining JS exceeds threshold.
// Ties go to the smaller (i, j).
inline std::vector<Alignment> align_topics(const std::vector<std::vector<double>>& A,
                                           const std::vector<std::vector<double>>& B,
                                           double threshold = kDefaultAlignThreshold) {
  std::vector<Alignment> candidates;
  for (std::size_t i = 0; i < A.size(); ++i) {
    for (std::size_t j = 0; j < B.size(); ++j) {
      if (A[i].size() != B[j].size()) {
        throw DataError("align_topics: topics " + std::to_string(i) + " and " + std::to_string(j) +
                        " are over different vocabularies");
      }
      candidates.push_back({i, j, js_divergence(A[i], B[j])});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Alignment& a, const Alignment& b) { return a.js < b.js; });
  std::vector<bool> used_a(A.size(), false), used_b(B.size(), false);
  std::vector<Alignment> out;
  for (const auto& c : candidates) {
    if (c.js > threshold) break;
    if (used_a[c.i] || used_b[c.j]) continue;
    used_a[c.i] = used_b[c.j] = true;
    out.push_back(c);
  }
  return out;
}

// Mean-path document-topic mixtures, one row per document. Documents with no
// in-vocabulary words get the uniform mixture.
inline diffnet::Matrix document_thetas(const std::vector<BowDocument>& docs,
                                       const ntm::EncoderParams& enc) {
  diffnet::Matrix out(docs.size(), enc.topics(), 1.0 / static_cast<double>(enc.topics()));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (docs[d].empty()) continue;
    const auto th = ntm::theta_mean_path(docs[d], enc);
    std::copy(th.begin(), th.end(), out.row(d).begin());
  }
  return out;
}

// CSV with header theta_0..theta_{T-1},label; empty label when unknown.
inline void write_features_csv(const diffnet::Matrix& thetas,
                               const std::vector<std::optional<std::string>>& labels,
                               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write features file " + path);
  for (std::size_t t = 0; t < thetas.cols(); ++t) out << "theta_" << t << ',';
  out << "label\n";
  out.precision(17);
  for (std::size_t d = 0; d < thetas.rows(); ++d) {
    for (std::size_t t = 0; t < thetas.cols(); ++t) out << thetas(d, t) << ',';
    const auto& l = labels.at(d);
    if (l) {
      if (l->find_first_of(",\"\n") != std::string::npos) {
        std::string q = "\"";
        for (const char c : *l) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
        out << q << '"';
      } else {
        out << *l;
      }
    }
    out << '\n';
  }
}

// Multinomial logistic regression on standardized features, trained by
// full-batch gradient descent with L2 penalty.
class LogisticRegression {
 public:
  struct Options {
    double l2 = 1e-4;
    std::size_t steps = 500;
    double lr = 0.5;
  };

  LogisticRegression() = default;

  void fit(const diffnet::Matrix& X, const std::vector<std::size_t>& y, std::size_t num_classes,
           const Options& opt) {
    if (X.rows() != y.size() || X.rows() == 0) throw DataError("logistic regression: bad training data");
    const std::size_t n = X.rows(), f = X.cols();
    classes_ = num_classes;
    mean_.assign(f, 0.0);
    scale_.assign(f, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < f; ++k) mean_[k] += X(i, k) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < f; ++k) {
        const double d = X(i, k) - mean_[k];
        scale_[k] += d * d / static_cast<double>(n);
      }
    for (auto& s : scale_) s = s > 1e-24 ? 1.0 / std::sqrt(s) : 1.0;
    W_ = diffnet::Matrix(f, classes_);
    b_ = diffnet::Matrix(1, classes_);
    const auto Z = standardize(X);
    for (std::size_t step = 0; step < opt.steps; ++step) {
      auto P = diffnet::softmax(diffnet::affine(Z, W_, b_));
      for (std::size_t i = 0; i < n; ++i) P(i, y[i]) -= 1.0;
      for (auto& v : P.data()) v /= static_cast<double>(n);
      auto g = diffnet::affine_backward(Z, W_, P);
      for (std::size_t k = 0; k < W_.size(); ++k)
        W_.data()[k] -= opt.lr * (g.dW.data()[k] + opt.l2 * W_.data()[k]);
      for (std::size_t k = 0; k < b_.size(); ++k) b_.data()[k] -= opt.lr * g.db.data()[k];
    }
  }

  std::vector<std::size_t> predict(const diffnet::Matrix& X) const {
    const auto logits = diffnet::affine(standardize(X), W_, b_);
    std::vector<std::size_t> out(X.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) {
      const auto r = logits.row(i);
      out[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
  }

 private:
  diffnet::Matrix standardize(const diffnet::Matrix& X) const {
    diffnet::Matrix Z(X.rows(), X.cols());
    for (std::size_t i = 0; i < X.rows(); ++i)
      for (std::size_t k = 0; k < X.cols(); ++k) Z(i, k) = (X(i, k) - mean_[k]) * scale_[k];
    return Z;
  }

  std::size_t classes_ = 0;
  std::vector<double> mean_, scale_;
  diffnet::Matrix W_, b_;
};

// Unweighted mean of per-class F1 over classes present in either vector.
inline double macro_f1(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred) {
  if (truth.size() != pred.size() || truth.empty()) throw DataError("macro_f1: bad inputs");
  std::set<std::size_t> classes(truth.begin(), truth.end());
  classes.insert(pred.begin(), pred.end());
  double total = 0.0;
  for (const auto c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (pred[i] == c && truth[i] == c) ++tp;
      else if (pred[i] == c) ++fp;
      else if (truth[i] == c) ++fn;
    }
    const double denom = 2.0 * tp + fp + fn;
    total += denom > 0 ? 2.0 * tp / denom : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

struct ClassificationReport {
  std::size_t num_classes = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  double macro_f1 = 0.0;
  std::vector<std::string> class_names;
};

// Seeded split of the labeled rows into train / held-out parts, proxy
// classifier fit on the first, macro-F1 on the second.
inline ClassificationReport classify(const diffnet::Matrix& features,
                                     const std::vector<std::optional<std::string>>& labels,
                                     double test_frac, std::uint64_t seed,
                                     const LogisticRegression::Options& opt = {}) {
  if (features.rows() != labels.size()) throw DataError("classify: feature/label count mismatch");
  std::map<std::string, std::size_t> class_ids;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    class_ids.emplace(*labels[i], 0);
    rows.push_back(i);
  }
  if (rows.size() < 2) throw DataError("classify: fewer than two labeled documents");
  ClassificationReport rep;
  for (auto& [name, id] : class_ids) {
    id = rep.class_names.size();
    rep.class_names.push_back(name);
  }
  rep.num_classes = class_ids.size();
  Rng rng(seed);
  rng.shuffle(rows.begin(), rows.end());
  auto n_test = static_cast<std::size_t>(std::round(test_frac * static_cast<double>(rows.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, rows.size() - 1);
  auto take = [&](std::size_t begin, std::size_t end, diffnet::Matrix& X, std::vector<std::size_t>& y) {
    X = diffnet::Matrix(end - begin, features.cols());
    for (std::size_t k = begin; k < end; ++k) {
      std::copy(features.row(rows[k]).begin(), features.row(rows[k]).end(), X.row(k - begin).begin());
      y.push_back(class_ids.at(*labels[rows[k]]));
    }
  };
  diffnet::Matrix Xtr, Xte;
  std::vector<std::size_t> ytr, yte;
  take(0, rows.size() - n_test, Xtr, ytr);
  take(rows.size() - n_test, rows.size(), Xte, yte);
  LogisticRegression model;
  model.fit(Xtr, ytr, rep.num_classes, opt);
  rep.train_size = ytr.size();
  rep.test_size = yte.size();
  rep.macro_f1 = macro_f1(yte, model.predict(Xte));
  return rep;
}

// Cosine similarity of the mean-path topic mixtures of two documents.
inline double similarity_probe(const BowDocument& a, const BowDocument& b,
                               const ntm::EncoderParams& enc) {
  const auto ta = ntm::theta_mean_path(a, enc);
  const auto tb = ntm::theta_mean_path(b, enc);
  return std::clamp(diffnet::cosine_sim_tau(ta, tb, 1.0), 0.0, 1.0);
}

// Cosine similarity of the mean-path topic mixtures of two texts.
inline double similarity_probe(std::string_view text_a, std::string_view text_b,
                               const ntm::EncoderParams& enc, const Vocabulary& vocab) {
  const auto a = vectorize(text_a, vocab);
  const auto b = vectorize(text_b, vocab);
  if (a.empty()) throw DataError("probe: text has no in-vocabulary words: \"" + std::string(text_a) + "\"");
  if (b.empty()) throw DataError("probe: text has no in-vocabulary words: \"" + std::string(text_b) + "\"");
  return similarity_probe(a, b, enc);
}

}  // namespace paretopic::eval
