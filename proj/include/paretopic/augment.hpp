#pragma once

// Positive / negative views of each document. The deterministic fallbacks
// live here; the LLM route is in llm.hpp. Views are stored as text so every
// method shares one cache format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "paretopic/corpus.hpp"
#include "paretopic/error.hpp"
#include "paretopic/rng.hpp"

namespace paretopic::augment {

enum class Polarity { related, unrelated };
enum class Method { llm, tfidf, dropout };

inline std::string to_string(Polarity p) { return p == Polarity::related ? "related" : "unrelated"; }

inline std::string to_string(Method m) {
  switch (m) {
    case Method::llm: return "llm";
    case Method::tfidf: return "tfidf";
    case Method::dropout: return "dropout";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "llm") return Method::llm;
  if (s == "tfidf") return Method::tfidf;
  if (s == "dropout") return Method::dropout;
  throw ConfigError("unknown augmentation method '" + s + "' (expected llm|tfidf|dropout)");
}

inline constexpr double kDefaultReplaceFrac = 0.3;
inline constexpr double kDefaultDropFrac = 0.3;

// splitmix64 finalizer; derives independent per-document seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Smoothed inverse document frequency, fit on the training split:
// idf(w) = ln((1 + D) / (1 + df(w))) + 1.
class TfidfModel {
 public:
  TfidfModel() = default;

  static TfidfModel fit(const std::vector<BowDocument>& docs, std::size_t V) {
    TfidfModel m;
    std::vector<std::uint32_t> df(V, 0);
    for (const auto& d : docs)
      for (const auto& [w, c] : d.counts) {
        if (w >= V) throw DataError("TfidfModel: word index out of range");
        ++df[w];
      }
    const double D = static_cast<double>(docs.size());
    m.idf_.resize(V);
    for (std::size_t w = 0; w < V; ++w) m.idf_[w] = std::log((1.0 + D) / (1.0 + df[w])) + 1.0;
    return m;
  }

  std::size_t vocab_size() const { return idf_.size(); }
  double idf(WordId w) const { return idf_.at(w); }
  double weight(WordId w, std::uint32_t count) const { return count * idf(w); }

 private:
  std::vector<double> idf_;
};

namespace detail {

inline void check_frac(double f, const char* what) {
  if (!(f > 0.0 && f < 1.0)) {
    throw ConfigError(std::string(what) + " must be in (0, 1), got " + std::to_string(f));
  }
}

}  // namespace detail

// Replaces the ⌈frac·nnz⌉ lowest-TF-IDF words (related) or highest-TF-IDF
// words (unrelated) with random vocabulary words not already in the
// document, each replacement inheriting the count of the word it replaces.
inline BowDocument tfidf_augment(const BowDocument& doc, Polarity polarity, double replace_frac,
                                 std::uint64_t seed, const TfidfModel& tfidf) {
  detail::check_frac(replace_frac, "replace_frac");
  if (doc.empty()) throw DataError("tfidf_augment: empty document");
  const std::size_t V = tfidf.vocab_size();
  BowDocument out;
  if (doc.nnz() == 1 && polarity == Polarity::related) {
    out.counts = doc.counts;
    return out;
  }

  std::vector<std::size_t> order(doc.nnz());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto score = [&](std::size_t i) { return tfidf.weight(doc.counts[i].first, doc.counts[i].second); };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = score(a), sb = score(b);
    if (sa != sb) return polarity == Polarity::related ? sa < sb : sa > sb;
    return doc.counts[a].first < doc.counts[b].first;
  });
  const auto k = std::min<std::size_t>(
      doc.nnz(), static_cast<std::size_t>(std::ceil(replace_frac * doc.nnz() - 1e-9)));

  std::unordered_set<WordId> taken;
  for (const auto& [w, c] : doc.counts) taken.insert(w);
  std::vector<WordId> pool;
  for (WordId w = 0; w < V; ++w)
    if (!taken.count(w)) pool.push_back(w);

  Rng rng(seed);
  std::unordered_map<WordId, std::uint32_t> result;
  for (const auto& [w, c] : doc.counts) result[w] = c;
  for (std::size_t r = 0; r < k; ++r) {
    const auto [w, c] = doc.counts[order[r]];
    WordId repl = w;
    if (!pool.empty()) {
      const auto j = rng.below(pool.size());
      repl = pool[j];
      pool[j] = pool.back();
      pool.pop_back();
    } else if (V > 1) {
      do {
        repl = static_cast<WordId>(rng.below(V));
      } while (repl == w);
    }
    if (repl == w) continue;
    result.erase(w);
    result[repl] += c;
  }
  out.counts = BowDocument::from_map(result).counts;
  return out;
}

// Removes ⌊drop_frac·nnz⌋ uniformly chosen entries, always keeping at least
// one.
inline BowDocument dropout_augment(const BowDocument& doc, double drop_frac, std::uint64_t seed) {
  detail::check_frac(drop_frac, "drop_frac");
  BowDocument out;
  if (doc.empty()) return out;
  const auto n = doc.nnz();
  const auto m = std::min<std::size_t>(
      n - 1, static_cast<std::size_t>(std::floor(drop_frac * static_cast<double>(n) + 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx.begin(), idx.end());
  std::vector<bool> drop(n, false);
  for (std::size_t i = 0; i < m; ++i) drop[idx[i]] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!drop[i]) out.counts.push_back(doc.counts[i]);
  return out;
}

struct AugmentedTriple {
  std::size_t anchor_id = 0;
  std::string positive_text;
  std::string negative_text;
  Method method = Method::tfidf;

  friend bool operator==(const AugmentedTriple&, const AugmentedTriple&) = default;
};

inline nlohmann::json to_json(const AugmentedTriple& t) {
  return {{"anchor_id", t.anchor_id},
          {"positive_text", t.positive_text},
          {"negative_text", t.negative_text},
          {"method", to_string(t.method)}};
}

inline void save_cache(const std::vector<AugmentedTriple>& triples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write augmentation cache " + path);
  for (const auto& t : triples) out << to_json(t).dump() << '\n';
  if (!out) throw DataError("failed writing augmentation cache " + path);
}

// Loads a cache, checking every anchor id against the corpus size.
inline std::vector<AugmentedTriple> load_cache(const std::string& path, std::size_t corpus_size) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read augmentation cache " + path);
  std::vector<AugmentedTriple> triples;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    AugmentedTriple t;
    try {
      const auto j = nlohmann::json::parse(line);
      t.anchor_id = j.at("anchor_id").get<std::size_t>();
      t.positive_text = j.at("positive_text").get<std::string>();
      t.negative_text = j.at("negative_text").get<std::string>();
      t.method = parse_method(j.at("method").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + " line " + std::to_string(line_number) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw DataError(path + " line " + std::to_string(line_number) + ": " + e.what());
    }
    if (t.anchor_id >= corpus_size) {
      throw DataError(path + " line " + std::to_string(line_number) + ": anchor_id " +
                      std::to_string(t.anchor_id) + " out of range for corpus of " +
                      std::to_string(corpus_size) + " documents");
    }
    if (t.positive_text.empty() || t.negative_text.empty()) {
      throw DataError(path + " line " + std::to_string(line_number) + ": empty augmentation text");
    }
    triples.push_back(std::move(t));
  }
  return triples;
}

struct FallbackOptions {
  double replace_frac = kDefaultReplaceFrac;
  double drop_frac = kDefaultDropFrac;
  std::uint64_t seed = 0;
};

// Deterministic augmentation of every non-empty document of a corpus.
//   tfidf:   positive = tfidf related, negative = tfidf unrelated
//   dropout: positive = dropout,       negative = tfidf unrelated
// Views that would come out empty are replaced by a dropout view of the
// anchor.
inline std::vector<AugmentedTriple> augment_fallback(const Corpus& corpus, const TfidfModel& tfidf,
                                                     Method method, const FallbackOptions& opt) {
  if (method == Method::llm) throw ConfigError("augment_fallback: llm is not a fallback method");
  std::vector<AugmentedTriple> triples;
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    const auto& doc = corpus.documents[i];
    if (doc.empty()) continue;
    const BowDocument pos =
        method == Method::tfidf
            ? tfidf_augment(doc, Polarity::related, opt.replace_frac, mix_seed(opt.seed, i, 0), tfidf)
            : dropout_augment(doc, opt.drop_frac, mix_seed(opt.seed, i, 0));
    const BowDocument neg =
        tfidf_augment(doc, Polarity::unrelated, opt.replace_frac, mix_seed(opt.seed, i, 1), tfidf);
    AugmentedTriple t{i, render_bow(pos, corpus.vocabulary), render_bow(neg, corpus.vocabulary),
                      method};
    if (t.positive_text.empty() || t.negative_text.empty()) t.method = Method::dropout;
    if (t.positive_text.empty())
      t.positive_text = render_bow(dropout_augment(doc, opt.drop_frac, mix_seed(opt.seed, i, 2)),
                                   corpus.vocabulary);
    if (t.negative_text.empty())
      t.negative_text = render_bow(dropout_augment(doc, opt.drop_frac, mix_seed(opt.seed, i, 3)),
                                   corpus.vocabulary);
    triples.push_back(std::move(t));
  }
  return triples;
}

// Replaces views that vectorize to nothing with dropout views of the anchor.
// Returns the number of views replaced.
inline std::size_t repair_empty_views(std::vector<AugmentedTriple>& triples, const Corpus& corpus,
                                      double drop_frac, std::uint64_t seed) {
  std::size_t repaired = 0;
  for (auto& t : triples) {
    const auto& anchor = corpus.documents.at(t.anchor_id);
    if (anchor.empty()) continue;
    auto fix = [&](std::string& text, std::uint64_t salt) {
      if (!vectorize(text, corpus.vocabulary).empty()) return;
      text = render_bow(dropout_augment(anchor, drop_frac, mix_seed(seed, t.anchor_id, salt)),
                        corpus.vocabulary);
      t.method = Method::dropout;
      ++repaired;
    };
    fix(t.positive_text, 2);
    fix(t.negative_text, 3);
  }
  return repaired;
}

}  // namespace paretopic::augment
