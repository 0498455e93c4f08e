#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "paretopic/error.hpp"

namespace paretopic {

using WordId = std::uint32_t;

// Lowercases, splits on runs of non-alphanumeric ASCII characters and drops
// tokens shorter than two characters or made only of digits.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (current.size() >= 2 &&
        !std::all_of(current.begin(), current.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; })) {
      tokens.push_back(current);
    }
    current.clear();
  };
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

class Vocabulary {
 public:
  Vocabulary() = default;

  Vocabulary(std::vector<std::string> words, std::vector<std::uint32_t> df)
      : words_(std::move(words)), df_(std::move(df)) {
    if (words_.size() != df_.size()) {
      throw DataError("vocabulary: " + std::to_string(words_.size()) + " words but " +
                      std::to_string(df_.size()) + " df entries");
    }
    index_.reserve(words_.size());
    for (std::size_t i = 0; i < words_.size(); ++i) {
      if (!index_.emplace(words_[i], static_cast<WordId>(i)).second) {
        throw DataError("vocabulary: duplicate token '" + words_[i] + "'");
      }
      if (df_[i] < 1) throw DataError("vocabulary: token '" + words_[i] + "' has df 0");
    }
  }

  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::uint32_t>& df() const { return df_; }
  const std::string& word(WordId id) const { return words_.at(id); }

  std::optional<WordId> find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  // FNV-1a over the newline-joined word list; identifies a vocabulary in
  // checkpoints.
  std::string hash() const {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](unsigned char c) {
      h ^= c;
      h *= 1099511628211ull;
    };
    for (const auto& w : words_) {
      for (const char c : w) mix(static_cast<unsigned char>(c));
      mix('\n');
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
  }

  nlohmann::json to_json() const { return {{"words", words_}, {"df", df_}}; }

  static Vocabulary from_json(const nlohmann::json& j) {
    try {
      return Vocabulary(j.at("words").get<std::vector<std::string>>(),
                        j.at("df").get<std::vector<std::uint32_t>>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("vocabulary file: ") + e.what());
    }
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    out << to_json().dump() << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read vocabulary file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("vocabulary file " + path + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::uint32_t> df_;
  std::unordered_map<std::string, WordId> index_;
};

// Sparse word-count vector. Entries are sorted by word id and every count is
// positive.
struct BowDocument {
  std::vector<std::pair<WordId, std::uint32_t>> counts;
  std::optional<std::string> label;
  std::optional<std::string> raw_text;

  bool empty() const { return counts.empty(); }
  std::size_t nnz() const { return counts.size(); }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [w, c] : counts) t += c;
    return t;
  }

  std::uint32_t count_of(WordId w) const {
    auto it = std::lower_bound(counts.begin(), counts.end(), std::make_pair(w, 0u));
    return (it != counts.end() && it->first == w) ? it->second : 0u;
  }

  // Builds a document from an unordered id→count map, dropping zero counts.
  static BowDocument from_map(const std::unordered_map<WordId, std::uint32_t>& m) {
    BowDocument d;
    for (const auto& [w, c] : m)
      if (c > 0) d.counts.emplace_back(w, c);
    std::sort(d.counts.begin(), d.counts.end());
    return d;
  }
};

enum class Split { train, test };

struct Corpus {
  std::vector<BowDocument> documents;
  Vocabulary vocabulary;
  Split split = Split::train;
};

inline Vocabulary build_vocabulary(const std::vector<std::string>& texts, std::uint32_t min_df,
                                   double max_df_frac, std::size_t max_size) {
  if (texts.empty()) throw DataError("build_vocabulary: no input texts");
  if (!(max_df_frac > 0.0 && max_df_frac <= 1.0)) {
    throw ConfigError("build_vocabulary: max_df_frac must be in (0, 1], got " +
                      std::to_string(max_df_frac));
  }
  std::unordered_map<std::string, std::uint32_t> df;
  for (const auto& text : texts) {
    auto tokens = tokenize(text);
    std::unordered_set<std::string> seen(tokens.begin(), tokens.end());
    for (const auto& t : seen) ++df[t];
  }
  const double max_df = max_df_frac * static_cast<double>(texts.size());
  std::vector<std::pair<std::string, std::uint32_t>> kept;
  for (auto& [token, count] : df) {
    if (count >= min_df && static_cast<double>(count) <= max_df) kept.emplace_back(token, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (kept.size() > max_size) kept.resize(max_size);
  if (kept.empty()) {
    std::ostringstream msg;
    msg << "build_vocabulary: no tokens left after filtering (min_df=" << min_df
        << ", max_df_frac=" << max_df_frac << ", max_size=" << max_size << ", "
        << texts.size() << " texts)";
    throw DataError(msg.str());
  }
  std::vector<std::string> words;
  std::vector<std::uint32_t> dfs;
  for (auto& [token, count] : kept) {
    words.push_back(token);
    dfs.push_back(count);
  }
  return Vocabulary(std::move(words), std::move(dfs));
}

// Out-of-vocabulary tokens are dropped. An empty result marks a document that
// the trainer skips.
inline BowDocument vectorize(std::string_view text, const Vocabulary& vocab) {
  std::unordered_map<WordId, std::uint32_t> m;
  for (const auto& token : tokenize(text)) {
    if (auto id = vocab.find(token)) ++m[*id];
  }
  auto doc = BowDocument::from_map(m);
  doc.raw_text = std::string(text);
  return doc;
}

// Renders a bag of words back to text, each word repeated by its count. The
// result vectorizes to the same counts under the same vocabulary.
inline std::string render_bow(const BowDocument& doc, const Vocabulary& vocab) {
  std::string out;
  for (const auto& [w, c] : doc.counts) {
    for (std::uint32_t k = 0; k < c; ++k) {
      if (!out.empty()) out.push_back(' ');
      out += vocab.word(w);
    }
  }
  return out;
}

struct RawDocument {
  std::string text;
  std::optional<std::string> label;
};

struct MalformedLine {
  std::size_t line_number;  // 1-based
  std::string reason;
};

struct CorpusLoad {
  std::vector<RawDocument> documents;
  std::vector<MalformedLine> malformed;
  std::vector<std::string> warnings;
};

// Maximum tolerated fraction of malformed lines in a corpus file.
inline constexpr double kMaxMalformedFraction = 0.01;

// Reads a JSONL corpus: one object per line with "text" and optional "label"
// (string or integer). Blank lines are ignored.
inline CorpusLoad load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus file " + path);
  CorpusLoad result;
  std::string line;
  std::size_t line_number = 0;
  std::size_t non_blank = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++non_blank;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      result.malformed.push_back({line_number, "invalid JSON"});
      continue;
    }
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
      result.malformed.push_back({line_number, "missing string field \"text\""});
      continue;
    }
    RawDocument doc{j["text"].get<std::string>(), std::nullopt};
    if (j.contains("label") && !j["label"].is_null()) {
      const auto& l = j["label"];
      if (l.is_string()) {
        doc.label = l.get<std::string>();
      } else if (l.is_number_integer()) {
        doc.label = std::to_string(l.get<long long>());
      } else {
        result.malformed.push_back({line_number, "label must be a string or integer"});
        continue;
      }
    }
    result.documents.push_back(std::move(doc));
  }
  if (non_blank == 0) result.warnings.push_back("corpus file " + path + " is empty");
  if (!result.malformed.empty()) {
    const double frac =
        static_cast<double>(result.malformed.size()) / static_cast<double>(non_blank);
    std::ostringstream msg;
    msg << result.malformed.size() << " malformed line(s) in " << path << ":";
    for (std::size_t i = 0; i < result.malformed.size() && i < 20; ++i) {
      msg << " line " << result.malformed[i].line_number << " (" << result.malformed[i].reason
          << ")";
    }
    if (frac > kMaxMalformedFraction) throw DataError(msg.str());
    result.warnings.push_back(msg.str());
  }
  return result;
}

inline Corpus make_corpus(const std::vector<RawDocument>& raw, const Vocabulary& vocab,
                          Split split) {
  Corpus c;
  c.vocabulary = vocab;
  c.split = split;
  c.documents.reserve(raw.size());
  for (const auto& r : raw) {
    auto d = vectorize(r.text, vocab);
    d.label = r.label;
    c.documents.push_back(std::move(d));
  }
  return c;
}

}  // namespace paretopic
