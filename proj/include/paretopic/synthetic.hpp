#pragma once

// Planted-topic corpora: documents drawn from a known LDA-style generative
// process, used to check that training recovers the planted word blocks.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "paretopic/corpus.hpp"
#include "paretopic/error.hpp"
#include "paretopic/rng.hpp"

namespace paretopic::synthetic {

struct PlantedSpec {
  std::size_t num_topics = 5;
  std::size_t words_per_topic = 40;  // disjoint block per topic
  std::size_t num_docs = 2000;
  double dirichlet_alpha = 0.1;
  double block_mass = 0.9;  // probability a topic emits from its own block
  std::size_t min_length = 60;
  std::size_t max_length = 120;
  std::uint64_t seed = 0;

  std::size_t vocab_size() const { return num_topics * words_per_topic; }
};

struct PlantedCorpus {
  std::vector<std::string> words;                  // word w belongs to block w / words_per_topic
  std::vector<std::vector<double>> topic_word;     // num_topics × V
  std::vector<std::vector<double>> doc_topic;      // num_docs × num_topics
  std::vector<RawDocument> documents;              // label = dominant planted topic

  std::size_t block_of(const std::string& word, std::size_t words_per_topic) const {
    for (std::size_t i = 0; i < words.size(); ++i)
      if (words[i] == word) return i / words_per_topic;
    throw DataError("unknown planted word '" + word + "'");
  }
};

inline std::string planted_word(std::size_t topic, std::size_t j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%zuw%02zu", topic, j);
  return buf;
}

inline std::vector<double> sample_dirichlet(std::size_t k, double alpha, Rng& rng) {
  std::vector<double> out(k);
  double s = 0.0;
  for (auto& v : out) {
    v = rng.gamma(alpha);
    s += v;
  }
  if (s <= 0.0) {
    // All draws underflowed; put the mass on one uniformly chosen component.
    std::fill(out.begin(), out.end(), 0.0);
    out[rng.below(k)] = 1.0;
    return out;
  }
  for (auto& v : out) v /= s;
  return out;
}

inline std::size_t sample_categorical(const std::vector<double>& p, Rng& rng) {
  const double u = rng.uniform();
  double c = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    c += p[i];
    if (u < c) return i;
  }
  return p.size() - 1;
}

// Text of one document with the given topic mixture.
inline std::string sample_text(const PlantedCorpus& pc, const std::vector<double>& mixture,
                               std::size_t length, Rng& rng) {
  std::string text;
  for (std::size_t n = 0; n < length; ++n) {
    const auto t = sample_categorical(mixture, rng);
    const auto w = sample_categorical(pc.topic_word[t], rng);
    if (!text.empty()) text.push_back(' ');
    text += pc.words[w];
  }
  return text;
}

inline PlantedCorpus make_planted_corpus(const PlantedSpec& spec) {
  if (spec.num_topics == 0 || spec.words_per_topic == 0 || spec.min_length == 0 ||
      spec.max_length < spec.min_length) {
    throw ConfigError("make_planted_corpus: invalid spec");
  }
  const std::size_t V = spec.vocab_size();
  PlantedCorpus pc;
  for (std::size_t t = 0; t < spec.num_topics; ++t)
    for (std::size_t j = 0; j < spec.words_per_topic; ++j) pc.words.push_back(planted_word(t, j));

  const double off_mass = (1.0 - spec.block_mass) / static_cast<double>(V);
  for (std::size_t t = 0; t < spec.num_topics; ++t) {
    std::vector<double> p(V, off_mass);
    for (std::size_t j = 0; j < spec.words_per_topic; ++j) {
      p[t * spec.words_per_topic + j] += spec.block_mass / static_cast<double>(spec.words_per_topic);
    }
    pc.topic_word.push_back(std::move(p));
  }

  Rng rng(spec.seed);
  for (std::size_t d = 0; d < spec.num_docs; ++d) {
    auto mixture = sample_dirichlet(spec.num_topics, spec.dirichlet_alpha, rng);
    const auto length = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
    RawDocument doc;
    doc.text = sample_text(pc, mixture, length, rng);
    std::size_t dominant = 0;
    for (std::size_t t = 1; t < mixture.size(); ++t)
      if (mixture[t] > mixture[dominant]) dominant = t;
    doc.label = "topic" + std::to_string(dominant);
    pc.doc_topic.push_back(std::move(mixture));
    pc.documents.push_back(std::move(doc));
  }
  return pc;
}

}  // namespace paretopic::synthetic
