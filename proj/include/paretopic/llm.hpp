#pragma once

// Chat-completions client for LLM-based augmentation, with retries and
// bounded request parallelism.

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "paretopic/augment.hpp"
#include "paretopic/corpus.hpp"
#include "paretopic/error.hpp"

namespace paretopic::llm {

using augment::Polarity;

inline constexpr const char* kApiKeyEnv = "PARETOPIC_API_KEY";

struct LlmConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key;
  double timeout_seconds = 30.0;
  int max_attempts = 3;
  double initial_backoff_seconds = 1.0;
  double backoff_multiplier = 2.0;
  std::string model = "gpt-3.5-turbo";
  double temperature = 1.0;
  int max_tokens = 256;
  // Placeholders: {{prompt}}, {{model}}, {{temperature}}, {{max_tokens}}.
  // {{prompt}} and {{model}} are substituted JSON-escaped, without quotes.
  std::string request_template =
      R"({"model": "{{model}}", "messages": [{"role": "user", "content": "{{prompt}}"}], )"
      R"("temperature": {{temperature}}, "max_tokens": {{max_tokens}}})";
  // JSON pointer to the completion text in the response body.
  std::string response_pointer = "/choices/0/message/content";
  // Input documents longer than this are cut before prompting.
  std::size_t max_document_chars = 4000;
  std::size_t parallelism = 4;
};

inline std::string make_prompt(std::string_view doc_text, Polarity polarity) {
  return "A sentence that is " + augment::to_string(polarity) + " to this text: " +
         std::string(doc_text);
}

namespace detail {

inline std::string json_escape(const std::string& s) {
  const auto quoted = nlohmann::json(s).dump();
  return quoted.substr(1, quoted.size() - 2);
}

inline void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

struct Url {
  std::string scheme_host_port;
  std::string path;
};

inline Url parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw ConfigError("invalid endpoint URL '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace detail

inline std::string render_request(const LlmConfig& cfg, const std::string& prompt) {
  std::string body = cfg.request_template;
  detail::replace_all(body, "{{prompt}}", detail::json_escape(prompt));
  detail::replace_all(body, "{{model}}", detail::json_escape(cfg.model));
  detail::replace_all(body, "{{temperature}}", nlohmann::json(cfg.temperature).dump());
  detail::replace_all(body, "{{max_tokens}}", std::to_string(cfg.max_tokens));
  if (!nlohmann::json::accept(body)) {
    throw ConfigError("request template does not render to valid JSON");
  }
  return body;
}

inline std::string extract_completion(const LlmConfig& cfg, const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw RemoteError("response is not JSON");
  }
  const nlohmann::json::json_pointer ptr(cfg.response_pointer);
  if (!j.contains(ptr) || !j.at(ptr).is_string()) {
    throw RemoteError("response has no text at " + cfg.response_pointer);
  }
  auto text = j.at(ptr).get<std::string>();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw RemoteError("response text is empty");
  }
  return text;
}

using SleepFn = std::function<void(double seconds)>;

inline void real_sleep(double seconds) {
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

// Sends the prompt for one document; retries transport errors, 408, 429 and
// 5xx responses with exponential backoff up to cfg.max_attempts attempts.
inline std::string llm_augment(std::string_view doc_text, Polarity polarity, const LlmConfig& cfg,
                               std::size_t doc_id = 0, const SleepFn& sleep = real_sleep) {
  if (doc_text.empty()) throw DataError("llm_augment: document " + std::to_string(doc_id) + " is empty");
  const auto url = detail::parse_url(cfg.endpoint);
  const auto prompt = make_prompt(doc_text.substr(0, cfg.max_document_chars), polarity);
  const auto body = render_request(cfg, prompt);

  httplib::Client client(url.scheme_host_port);
  if (!client.is_valid()) {
    throw ConfigError("endpoint " + cfg.endpoint + " is not usable (TLS support missing?)");
  }
  const auto secs = static_cast<time_t>(cfg.timeout_seconds);
  const auto usecs = static_cast<time_t>((cfg.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

  std::string last_error;
  double backoff = cfg.initial_backoff_seconds;
  int attempts = 0;
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    attempts = attempt;
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      try {
        return extract_completion(cfg, res->body);
      } catch (const RemoteError& e) {
        throw RemoteError("document " + std::to_string(doc_id) + ": " + e.what());
      }
    } else {
      last_error = "HTTP " + std::to_string(res->status);
      const bool retryable = res->status == 408 || res->status == 429 || res->status >= 500;
      if (!retryable) break;
    }
    if (attempt < cfg.max_attempts) {
      sleep(backoff);
      backoff *= cfg.backoff_multiplier;
    }
  }
  throw RemoteError("document " + std::to_string(doc_id) + ": augmentation request failed after " +
                    std::to_string(attempts) + " attempt(s): " + last_error);
}

// Runs fn(i) for i in [0, n) on at most `parallelism` threads. Results keep
// index order. After a failure no new indices are started; once in-flight
// calls finish, the failure with the smallest index is rethrown.
template <typename R>
std::vector<R> run_bounded(std::size_t n, std::size_t parallelism,
                           const std::function<R(std::size_t)>& fn) {
  std::vector<R> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i = next++; i < n && !failed; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(parallelism, n));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

// LLM views for every non-empty document. Completions that vectorize to
// nothing fall back to dropout views of the anchor.
inline std::vector<augment::AugmentedTriple> augment_corpus(
    const Corpus& corpus, const std::vector<std::string>& texts, const LlmConfig& cfg,
    const augment::FallbackOptions& fallback, const SleepFn& sleep = real_sleep) {
  if (texts.size() != corpus.documents.size()) {
    throw DataError("augment_corpus: text count does not match corpus size");
  }
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < corpus.documents.size(); ++i)
    if (!corpus.documents[i].empty()) ids.push_back(i);
  std::function<augment::AugmentedTriple(std::size_t)> job = [&](std::size_t k) {
    const auto id = ids[k];
    return augment::AugmentedTriple{id, llm_augment(texts[id], Polarity::related, cfg, id, sleep),
                                    llm_augment(texts[id], Polarity::unrelated, cfg, id, sleep),
                                    augment::Method::llm};
  };
  auto triples = run_bounded(ids.size(), cfg.parallelism, job);
  augment::repair_empty_views(triples, corpus, fallback.drop_frac, fallback.seed);
  return triples;
}

}  // namespace paretopic::llm
