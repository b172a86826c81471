#pragma once

// Uniform access to completion backends: scripted and remote transports, a
// retry wrapper, the persistent append-only response cache, the token-cost
// ledger, and the logit-based confidence transform.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"
#include "quorum/errors.hpp"

namespace quorum {

struct BackendId {
  std::string name;          // unique within a run
  std::string endpoint_ref;  // opaque transport description, for logs only
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct Completion {
  std::string text;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct DecodingParams {
  double temperature = 0.0;
  int max_tokens = 512;
  bool request_logprobs = true;
};

class TransportError : public std::runtime_error {
 public:
  TransportError(std::string backend, const std::string& message)
      : std::runtime_error(backend.empty()
                               ? message
                               : "backend '" + backend + "': " + message),
        backend_(std::move(backend)) {}
  const std::string& backend() const { return backend_; }

 private:
  std::string backend_;
};

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

// exp of the mean log-probability over the answer token span, clamped into
// (0, 1]. Returns nullopt when the completion carries no logprobs at all;
// an empty or out-of-range span is a caller bug and throws.
inline constexpr double kMinLogitConfidence = 1e-6;

inline std::optional<double> logit_confidence(const Completion& completion,
                                              std::size_t span_begin,
                                              std::size_t span_end) {
  if (!completion.token_logprobs) return std::nullopt;
  const auto& lp = *completion.token_logprobs;
  if (span_begin >= span_end || span_end > lp.size())
    throw std::invalid_argument("answer span is empty or out of range");
  double sum = 0.0;
  for (std::size_t i = span_begin; i < span_end; ++i) sum += lp[i].logprob;
  double conf = std::exp(sum / static_cast<double>(span_end - span_begin));
  return std::clamp(conf, kMinLogitConfidence, 1.0);
}

// Whitespace-delimited word count; the deterministic stand-in used when a
// scripted reply does not pin explicit token counts.
inline std::int64_t approximate_token_count(std::string_view text) {
  std::int64_t n = 0;
  bool in_word = false;
  for (char ch : text) {
    bool space = ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' ||
                 ch == '\f' || ch == '\v';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

// Thread-safe run accounting: token totals per backend and per phase, plus
// raw transport dispatch / served-completion counters. Cache hits add zero.
class TokenLedger {
 public:
  struct Counts {
    std::int64_t prompt = 0;
    std::int64_t completion = 0;
  };

  void account(const Completion& c, const std::string& backend,
               const std::string& phase) {
    std::lock_guard lock(m_);
    total_.prompt += c.prompt_tokens;
    total_.completion += c.completion_tokens;
    auto& b = per_backend_[backend];
    b.prompt += c.prompt_tokens;
    b.completion += c.completion_tokens;
    auto& p = per_phase_[phase];
    p.prompt += c.prompt_tokens;
    p.completion += c.completion_tokens;
  }

  void record_transport_call(const std::string& backend) {
    std::lock_guard lock(m_);
    ++transport_calls_[backend];
  }

  void record_completion_served() {
    std::lock_guard lock(m_);
    ++completions_served_;
  }

  Counts total() const {
    std::lock_guard lock(m_);
    return total_;
  }

  std::map<std::string, Counts> per_backend() const {
    std::lock_guard lock(m_);
    return per_backend_;
  }

  std::map<std::string, Counts> per_phase() const {
    std::lock_guard lock(m_);
    return per_phase_;
  }

  std::map<std::string, std::int64_t> transport_calls() const {
    std::lock_guard lock(m_);
    return transport_calls_;
  }

  std::int64_t transport_calls_total() const {
    std::lock_guard lock(m_);
    std::int64_t n = 0;
    for (const auto& [_, v] : transport_calls_) n += v;
    return n;
  }

  std::int64_t completions_served() const {
    std::lock_guard lock(m_);
    return completions_served_;
  }

  nlohmann::json to_json() const {
    std::lock_guard lock(m_);
    nlohmann::json j;
    j["total"] = {{"prompt_tokens", total_.prompt},
                  {"completion_tokens", total_.completion}};
    nlohmann::json backends = nlohmann::json::object();
    for (const auto& [name, c] : per_backend_)
      backends[name] = {{"prompt_tokens", c.prompt},
                        {"completion_tokens", c.completion}};
    j["per_backend"] = backends;
    nlohmann::json phases = nlohmann::json::object();
    for (const auto& [name, c] : per_phase_)
      phases[name] = {{"prompt_tokens", c.prompt},
                      {"completion_tokens", c.completion}};
    j["per_phase"] = phases;
    nlohmann::json calls = nlohmann::json::object();
    for (const auto& [name, n] : transport_calls_) calls[name] = n;
    j["transport_calls"] = calls;
    j["completions_served"] = completions_served_;
    return j;
  }

 private:
  mutable std::mutex m_;
  Counts total_;
  std::map<std::string, Counts> per_backend_;
  std::map<std::string, Counts> per_phase_;
  std::map<std::string, std::int64_t> transport_calls_;
  std::int64_t completions_served_ = 0;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Completion complete(const std::string& prompt,
                              const DecodingParams& params) = 0;
};

struct ScriptedReply {
  std::string text;
  std::optional<std::vector<TokenLogprob>> logprobs;
  std::optional<std::int64_t> prompt_tokens;
  std::optional<std::int64_t> completion_tokens;
  bool fail = false;  // simulate a transport failure for this call
};

// Deterministic stand-in for a live model. Replies come from a handler
// (arbitrary C++ or rules loaded from a script file); calls are counted so
// tests can assert exactly how many times the wire was touched.
class ScriptedTransport : public Transport {
 public:
  using Handler = std::function<ScriptedReply(const std::string& prompt)>;

  explicit ScriptedTransport(Handler handler) : handler_(std::move(handler)) {
    if (!handler_) throw std::invalid_argument("scripted handler must be callable");
  }

  // Script file: {"rules": [...], "default": {...}?}. Each rule carries
  // "contains" (all substrings must appear in the prompt; first match wins)
  // plus the reply fields of ScriptedReply. "logprobs" is a list of
  // [token, logprob] pairs.
  static std::unique_ptr<ScriptedTransport> from_file(
      const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open backend script: " + file.string());
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded())
      throw DataError("backend script is not valid JSON: " + file.string());
    return std::make_unique<ScriptedTransport>(rules_handler(doc, file.string()));
  }

  Completion complete(const std::string& prompt,
                      const DecodingParams&) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    ScriptedReply r = handler_(prompt);
    if (r.fail) throw std::runtime_error("scripted transport failure");
    Completion c;
    c.text = std::move(r.text);
    c.token_logprobs = std::move(r.logprobs);
    c.prompt_tokens = r.prompt_tokens.value_or(approximate_token_count(prompt));
    if (c.token_logprobs)
      c.completion_tokens = static_cast<std::int64_t>(c.token_logprobs->size());
    else
      c.completion_tokens =
          r.completion_tokens.value_or(approximate_token_count(c.text));
    return c;
  }

  int calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  static Handler rules_handler(const nlohmann::json& doc,
                               const std::string& origin) {
    if (!doc.is_object() || !doc.contains("rules") || !doc["rules"].is_array())
      throw DataError("backend script needs a 'rules' array: " + origin);
    struct Rule {
      std::vector<std::string> contains;
      ScriptedReply reply;
    };
    auto parse_reply = [&origin](const nlohmann::json& j) {
      ScriptedReply r;
      if (!j.contains("text") || !j["text"].is_string())
        throw DataError("backend script reply needs a 'text' string: " + origin);
      r.text = j["text"].get<std::string>();
      if (j.contains("logprobs") && !j["logprobs"].is_null()) {
        std::vector<TokenLogprob> lp;
        for (const auto& pair : j["logprobs"])
          lp.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
        r.logprobs = std::move(lp);
      }
      if (j.contains("prompt_tokens"))
        r.prompt_tokens = j["prompt_tokens"].get<std::int64_t>();
      if (j.contains("completion_tokens"))
        r.completion_tokens = j["completion_tokens"].get<std::int64_t>();
      if (j.contains("fail")) r.fail = j["fail"].get<bool>();
      return r;
    };
    auto rules = std::make_shared<std::vector<Rule>>();
    for (const auto& rj : doc["rules"]) {
      Rule rule;
      if (rj.contains("contains"))
        for (const auto& s : rj["contains"])
          rule.contains.push_back(s.get<std::string>());
      rule.reply = parse_reply(rj);
      rules->push_back(std::move(rule));
    }
    std::shared_ptr<ScriptedReply> fallback;
    if (doc.contains("default"))
      fallback = std::make_shared<ScriptedReply>(parse_reply(doc["default"]));
    return [rules, fallback, origin](const std::string& prompt) {
      for (const Rule& rule : *rules) {
        bool hit = true;
        for (const std::string& needle : rule.contains)
          if (prompt.find(needle) == std::string::npos) {
            hit = false;
            break;
          }
        if (hit) return rule.reply;
      }
      if (fallback) return *fallback;
      throw std::runtime_error("no scripted reply matches prompt (" + origin + ")");
    };
  }

  Handler handler_;
  std::atomic<int> calls_{0};
};

struct CacheKey {
  std::string backend;
  std::string prompt_sha256;
  std::string params_sha256;

  std::string digest() const {
    return sha256_hex(backend + "\n" + prompt_sha256 + "\n" + params_sha256);
  }
};

inline std::string params_digest(const DecodingParams& p) {
  nlohmann::json j{{"temperature", p.temperature},
                   {"max_tokens", p.max_tokens},
                   {"request_logprobs", p.request_logprobs}};
  return sha256_hex(j.dump());
}

inline CacheKey make_cache_key(const std::string& backend,
                               const std::string& prompt,
                               const DecodingParams& params) {
  return {backend, sha256_hex(prompt), params_digest(params)};
}

inline nlohmann::json completion_to_json(const Completion& c) {
  nlohmann::json j;
  j["text"] = c.text;
  if (c.token_logprobs) {
    nlohmann::json lp = nlohmann::json::array();
    for (const auto& t : *c.token_logprobs)
      lp.push_back(nlohmann::json::array({t.token, t.logprob}));
    j["logprobs"] = std::move(lp);
  } else {
    j["logprobs"] = nullptr;
  }
  j["prompt_tokens"] = c.prompt_tokens;
  j["completion_tokens"] = c.completion_tokens;
  return j;
}

inline Completion completion_from_json(const nlohmann::json& j) {
  Completion c;
  c.text = j.at("text").get<std::string>();
  if (j.contains("logprobs") && !j["logprobs"].is_null()) {
    std::vector<TokenLogprob> lp;
    for (const auto& pair : j["logprobs"])
      lp.push_back({pair.at(0).get<std::string>(), pair.at(1).get<double>()});
    c.token_logprobs = std::move(lp);
  }
  c.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  c.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  return c;
}

// Append-only JSONL response cache keyed by (backend, prompt, params)
// digests. Safe for concurrent readers/writers within one process; a torn
// final line left by a crash is truncated away on load.
class CompletionCache {
 public:
  explicit CompletionCache(std::filesystem::path file) : path_(std::move(file)) {
    load();
  }

  const std::filesystem::path& path() const { return path_; }

  std::optional<Completion> lookup(const CacheKey& key) const {
    std::shared_lock lock(m_);
    auto it = entries_.find(key.digest());
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void insert(const CacheKey& key, const Completion& completion) {
    std::unique_lock lock(m_);
    std::string digest = key.digest();
    if (!entries_.emplace(digest, completion).second) return;
    nlohmann::json j;
    j["key"] = digest;
    j["backend"] = key.backend;
    j["prompt_sha256"] = key.prompt_sha256;
    j["params_sha256"] = key.params_sha256;
    j["completion"] = completion_to_json(completion);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw DataError("cannot append to cache file: " + path_.string());
    if (needs_leading_newline_) {
      out << '\n';
      needs_leading_newline_ = false;
    }
    out << j.dump() << '\n';
    out.flush();
  }

  std::size_t size() const {
    std::shared_lock lock(m_);
    return entries_.size();
  }

 private:
  void load() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;  // nothing cached yet
    std::string line;
    std::uintmax_t good_end = 0;
    std::size_t line_no = 0;
    bool torn = false;
    while (std::getline(in, line)) {
      ++line_no;
      std::streampos pos = in.tellg();
      if (line.empty()) {
        if (pos != std::streampos(-1)) good_end = static_cast<std::uintmax_t>(pos);
        continue;
      }
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      bool ok = !j.is_discarded() && j.is_object() && j.contains("key") &&
                j.contains("completion");
      if (!ok) {
        // only a torn final line is forgivable
        std::string rest;
        if (std::getline(in, rest))
          throw DataError("cache file corrupt at line " + std::to_string(line_no) +
                          ": " + path_.string());
        torn = true;
        break;
      }
      try {
        entries_[j["key"].get<std::string>()] =
            completion_from_json(j["completion"]);
      } catch (const nlohmann::json::exception&) {
        throw DataError("cache file corrupt at line " + std::to_string(line_no) +
                        ": " + path_.string());
      }
      if (pos != std::streampos(-1)) good_end = static_cast<std::uintmax_t>(pos);
    }
    std::error_code ec;
    if (torn) {
      std::filesystem::resize_file(path_, good_end, ec);
      if (ec)
        throw DataError("cannot truncate torn cache tail: " + path_.string());
    }
    // appends must start on a fresh line even if the final newline went missing
    std::uintmax_t size = std::filesystem::file_size(path_, ec);
    if (!ec && size > 0) {
      std::ifstream tail(path_, std::ios::binary);
      tail.seekg(static_cast<std::streamoff>(size - 1));
      char last = '\n';
      tail.get(last);
      needs_leading_newline_ = last != '\n';
    }
  }

  mutable std::shared_mutex m_;
  std::filesystem::path path_;
  std::unordered_map<std::string, Completion> entries_;
  bool needs_leading_newline_ = false;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{100};  // doubles per attempt
};

// Named backends behind one call surface. Completions go through the cache
// first; misses hit the transport with bounded retries, and every obtained
// completion is accounted to the ledger at call time.
class BackendPool {
 public:
  void add(BackendId id, std::unique_ptr<Transport> transport,
           RetryPolicy retry = {}) {
    if (id.name.empty()) throw std::invalid_argument("backend name must not be empty");
    if (has(id.name))
      throw std::invalid_argument("duplicate backend name: " + id.name);
    if (retry.max_attempts < 1)
      throw std::invalid_argument("retry needs at least one attempt");
    entries_.push_back({std::move(id), std::move(transport), retry});
  }

  void attach_cache(std::shared_ptr<CompletionCache> cache) { cache_ = std::move(cache); }
  void attach_ledger(std::shared_ptr<TokenLedger> ledger) { ledger_ = std::move(ledger); }
  const std::shared_ptr<TokenLedger>& ledger() const { return ledger_; }

  bool has(std::string_view name) const {
    for (const auto& e : entries_)
      if (e.id.name == name) return true;
    return false;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.id.name);
    return out;
  }

  Transport& transport(std::string_view name) { return *find(name).transport; }

  struct Outcome {
    Completion completion;
    bool from_cache = false;
  };

  Outcome complete(const std::string& backend, const std::string& prompt,
                   const DecodingParams& params, const std::string& phase) {
    if (prompt.empty()) throw std::invalid_argument("prompt must not be empty");
    Entry& e = find(backend);
    CacheKey key = make_cache_key(backend, prompt, params);
    if (cache_) {
      if (auto hit = cache_->lookup(key)) {
        if (ledger_) ledger_->record_completion_served();
        return {*hit, true};
      }
    }
    std::chrono::milliseconds delay = e.retry.initial_backoff;
    std::string last_error = "transport failed";
    for (int attempt = 1; attempt <= e.retry.max_attempts; ++attempt) {
      try {
        if (ledger_) ledger_->record_transport_call(backend);
        Completion c = e.transport->complete(prompt, params);
        if (cache_) cache_->insert(key, c);
        if (ledger_) {
          ledger_->account(c, backend, phase);
          ledger_->record_completion_served();
        }
        return {std::move(c), false};
      } catch (const std::exception& ex) {
        last_error = ex.what();
        if (attempt < e.retry.max_attempts) {
          std::this_thread::sleep_for(delay);
          delay *= 2;
        }
      }
    }
    throw TransportError(backend, last_error);
  }

 private:
  struct Entry {
    BackendId id;
    std::unique_ptr<Transport> transport;
    RetryPolicy retry;
  };

  Entry& find(std::string_view name) {
    for (auto& e : entries_)
      if (e.id.name == name) return e;
    throw std::invalid_argument("unknown backend: " + std::string(name));
  }

  std::vector<Entry> entries_;
  std::shared_ptr<CompletionCache> cache_;
  std::shared_ptr<TokenLedger> ledger_;
};

}  // namespace quorum
