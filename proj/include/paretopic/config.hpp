#pragma once

// Flat `key = value` configuration with namespaced keys (model.T, train.lr,
// moo.strategy, setcl.K, ...). Unknown keys are rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "paretopic/error.hpp"

namespace paretopic {

struct KeySpec {
  std::string key;
  std::string default_value;
  std::string help;
};

// Every recognized key with its default.
inline const std::vector<KeySpec>& known_keys() {
  static const std::vector<KeySpec> keys = {
      {"model.T", "50", "number of topics"},
      {"model.H", "100", "encoder hidden units"},
      {"setcl.K", "4", "documents per set"},
      {"setcl.S", "8", "shuffled index rows per batch"},
      {"setcl.tau", "0.2", "InfoNCE temperature"},
      {"setcl.pooling_positive", "min", "pooling for anchor/positive sets (min|max|mean|sum)"},
      {"setcl.pooling_negative", "max", "pooling for anchor/negative sets (min|max|mean|sum)"},
      {"setcl.include_own_negative", "false",
       "also contrast each set against its own negative view"},
      {"train.lr", "0.002", "learning rate"},
      {"train.batch_size", "200", "documents per batch"},
      {"train.epochs", "200", "training epochs"},
      {"train.seed", "", "random seed (required for train)"},
      {"train.optimizer", "sgd", "sgd|adam"},
      {"train.adam_beta1", "0.9", "Adam first-moment decay"},
      {"train.adam_beta2", "0.999", "Adam second-moment decay"},
      {"train.adam_eps", "1e-8", "Adam denominator epsilon"},
      {"train.contrastive", "true", "false trains on the ELBO alone"},
      {"moo.strategy", "mgda", "mgda|linear|random|pcgrad"},
      {"moo.linear_alpha", "0.5", "contrastive weight for the linear strategy"},
      {"moo.tie_eps", "1e-12", "degenerate-pair threshold of the min-norm solver"},
      {"corpus.min_df", "5", "minimum document frequency"},
      {"corpus.max_df_frac", "0.7", "maximum document frequency fraction"},
      {"corpus.max_size", "2000", "maximum vocabulary size"},
      {"augment.method", "tfidf", "llm|tfidf|dropout"},
      {"augment.replace_frac", "0.3", "fraction of words replaced by tfidf augmentation"},
      {"augment.drop_frac", "0.3", "fraction of words removed by dropout augmentation"},
      {"augment.seed", "0", "seed for the deterministic augmenters"},
      {"augment.endpoint", "https://api.openai.com/v1/chat/completions", "LLM endpoint URL"},
      {"augment.model", "gpt-3.5-turbo", "LLM model name"},
      {"augment.temperature", "1.0", "LLM sampling temperature"},
      {"augment.max_tokens", "256", "LLM completion length limit"},
      {"augment.timeout", "30", "request timeout in seconds"},
      {"augment.parallelism", "4", "concurrent LLM requests"},
      {"augment.request_template", "", "request body template (empty: chat-completions shape)"},
      {"augment.response_pointer", "/choices/0/message/content",
       "JSON pointer to the completion text"},
      {"eval.top_n", "10", "words per topic"},
      {"eval.npmi_eps", "1e-12", "NPMI smoothing"},
      {"eval.align_threshold", "0.5", "JS divergence cut-off for topic alignment"},
  };
  return keys;
}

class Config {
 public:
  Config() {
    for (const auto& k : known_keys()) values_[k.key] = k.default_value;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  void parse(std::istream& in, const std::string& source = "config") {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value");
      }
      try {
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    parse(in, path);
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }

  std::int64_t integer(const std::string& key) const {
    const auto& s = str(key);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(key + ": expected an integer, got '" + s + "'");
    }
    return v;
  }

  std::size_t count(const std::string& key) const {
    const auto v = integer(key);
    if (v < 0) throw ConfigError(key + ": must be non-negative, got " + std::to_string(v));
    return static_cast<std::size_t>(v);
  }

  bool boolean(const std::string& key) const {
    const auto& s = str(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key + ": expected true|false, got '" + s + "'");
  }

  bool has_value(const std::string& key) const { return !str(key).empty(); }

  const std::map<std::string, std::string>& values() const { return values_; }

  // Resolved configuration, one key=value per line, sorted by key.
  std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace paretopic
