#pragma once

// Transport for OpenAI-compatible chat-completions endpoints, with optional
// per-token logprobs and bearer auth from an environment variable.

#include <cstdlib>
#include <memory>
#include <stdexcept>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "quorum/backends.hpp"

namespace quorum {

struct HttpEndpoint {
  std::string base_url;  // e.g. "http://host:8000" or "https://host/v1"
  std::string model;
  std::string auth_env;  // env var holding the bearer token, optional
  int timeout_seconds = 120;
};

namespace detail {

struct SplitUrl {
  std::string host;  // scheme://authority
  std::string path;  // leading path, possibly empty
};

inline SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw std::invalid_argument("endpoint must carry a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string path = url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, path_start), path};
}

// ".../v1" gains "/chat/completions"; a bare authority gains the whole
// standard path; an explicit full path is used as-is.
inline std::string completions_path(const std::string& prefix) {
  if (prefix.empty()) return "/v1/chat/completions";
  if (prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0)
    return prefix + "/chat/completions";
  const std::string leaf = "/chat/completions";
  if (prefix.size() >= leaf.size() &&
      prefix.compare(prefix.size() - leaf.size(), leaf.size(), leaf) == 0)
    return prefix;
  return prefix + "/v1/chat/completions";
}

}  // namespace detail

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    auto split = detail::split_url(endpoint_.base_url);
    host_ = split.host;
    path_ = detail::completions_path(split.path);
  }

  Completion complete(const std::string& prompt,
                      const DecodingParams& params) override {
    nlohmann::json body;
    body["model"] = endpoint_.model;
    body["messages"] =
        nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    if (params.request_logprobs) body["logprobs"] = true;

    httplib::Client client(host_);
    client.set_connection_timeout(endpoint_.timeout_seconds, 0);
    client.set_read_timeout(endpoint_.timeout_seconds, 0);
    client.set_write_timeout(endpoint_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!endpoint_.auth_env.empty()) {
      const char* token = std::getenv(endpoint_.auth_env.c_str());
      if (token && *token)
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res)
      throw std::runtime_error("request to " + host_ + path_ + " failed: " +
                               httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw std::runtime_error("endpoint returned HTTP " +
                               std::to_string(res->status) + ": " +
                               res->body.substr(0, 200));
    nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded())
      throw std::runtime_error("endpoint returned unparsable JSON");
    return parse_response(j);
  }

  const std::string& request_path() const { return path_; }

 private:
  static Completion parse_response(const nlohmann::json& j) {
    Completion c;
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
      throw std::runtime_error("endpoint response has no choices");
    const auto& choice = j["choices"][0];
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string())
      c.text = choice["message"]["content"].get<std::string>();
    else if (choice.contains("text") && choice["text"].is_string())
      c.text = choice["text"].get<std::string>();  // legacy completion shape
    else
      throw std::runtime_error("endpoint response has no message content");
    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") &&
        choice["logprobs"]["content"].is_array()) {
      std::vector<TokenLogprob> lp;
      for (const auto& item : choice["logprobs"]["content"]) {
        if (!item.contains("token") || !item.contains("logprob")) continue;
        lp.push_back({item["token"].get<std::string>(),
                      item["logprob"].get<double>()});
      }
      if (!lp.empty()) c.token_logprobs = std::move(lp);
    }
    if (j.contains("usage") && j["usage"].is_object()) {
      const auto& usage = j["usage"];
      if (usage.contains("prompt_tokens"))
        c.prompt_tokens = usage["prompt_tokens"].get<std::int64_t>();
      if (usage.contains("completion_tokens"))
        c.completion_tokens = usage["completion_tokens"].get<std::int64_t>();
    }
    // the type invariant wins over a disagreeing usage block
    if (c.token_logprobs)
      c.completion_tokens = static_cast<std::int64_t>(c.token_logprobs->size());
    return c;
  }

  HttpEndpoint endpoint_;
  std::string host_;
  std::string path_;
};

}  // namespace quorum
