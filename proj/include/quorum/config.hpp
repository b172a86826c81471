#pragma once

// Run configuration: strict JSON parsing, invariant validation, and the
// builders that turn a config into alias tables, prompt libraries, and a
// backend pool.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "quorum/backends.hpp"
#include "quorum/consensus.hpp"
#include "quorum/errors.hpp"
#include "quorum/expertise.hpp"
#include "quorum/http_backend.hpp"
#include "quorum/prompts.hpp"
#include "quorum/taxonomy.hpp"

namespace quorum {

struct BackendConfig {
  std::string name;
  std::string kind;  // "openai" or "scripted"
  std::string endpoint;
  std::string model;
  std::string auth_env;
  std::string script;  // scripted: reply rules file
  int timeout_seconds = 120;
};

struct RunConfig {
  std::vector<BackendConfig> backends;
  double expertise_fraction = 0.1;
  std::uint64_t seed = 0;
  double alpha = 2.0;
  double beta = 1.0;
  std::string conf_source = "logit";  // logit | self-report | none
  bool preserve_policy = true;
  int debate_rounds = 1;
  int parallelism = 4;
  std::string cache_path = "cache.jsonl";  // relative: under output_dir
  std::string output_dir = "out";
  std::string scoring_prompt = "expert-role";  // expert-role | neutral
  bool stratify_by_language = false;
  std::map<std::string, std::string> aliases;  // extra alias -> canonical token
  std::string template_dir;                    // empty: built-in templates
  int max_attempts = 3;
  int backoff_ms = 100;
  double temperature = 0.0;
  int max_tokens = 512;
  bool request_logprobs = true;
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw DataError("unknown config key '" + key + "' in " + where);
}

template <typename T>
T take(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw DataError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("config root must be a JSON object");
  detail::require_keys(
      j,
      {"backends", "expertise_fraction", "seed", "alpha", "beta", "conf_source",
       "preserve_policy", "debate_rounds", "parallelism", "cache_path",
       "output_dir", "scoring_prompt", "stratify_by_language", "aliases",
       "template_dir", "max_attempts", "backoff_ms", "temperature", "max_tokens",
       "request_logprobs"},
      "config root");
  RunConfig c;
  if (!j.contains("backends") || !j["backends"].is_array() || j["backends"].empty())
    throw DataError("config needs a non-empty 'backends' array");
  std::set<std::string> names;
  for (const auto& bj : j["backends"]) {
    detail::require_keys(bj,
                         {"name", "kind", "endpoint", "model", "auth_env", "script",
                          "timeout_seconds"},
                         "backend entry");
    BackendConfig b;
    b.name = detail::take<std::string>(bj, "name", "");
    b.kind = detail::take<std::string>(bj, "kind", "openai");
    b.endpoint = detail::take<std::string>(bj, "endpoint", "");
    b.model = detail::take<std::string>(bj, "model", "");
    b.auth_env = detail::take<std::string>(bj, "auth_env", "");
    b.script = detail::take<std::string>(bj, "script", "");
    b.timeout_seconds = detail::take<int>(bj, "timeout_seconds", 120);
    if (b.name.empty()) throw DataError("backend entry without a name");
    if (!names.insert(b.name).second)
      throw DataError("duplicate backend name: " + b.name);
    if (b.kind == "openai") {
      if (b.endpoint.empty() || b.model.empty())
        throw DataError("openai backend '" + b.name + "' needs endpoint and model");
    } else if (b.kind == "scripted") {
      if (b.script.empty())
        throw DataError("scripted backend '" + b.name + "' needs a script file");
    } else {
      throw DataError("backend '" + b.name + "' has unknown kind '" + b.kind + "'");
    }
    if (b.timeout_seconds < 1)
      throw DataError("backend '" + b.name + "' needs a positive timeout");
    c.backends.push_back(std::move(b));
  }
  c.expertise_fraction = detail::take<double>(j, "expertise_fraction", c.expertise_fraction);
  if (!(c.expertise_fraction > 0.0 && c.expertise_fraction < 1.0))
    throw DataError("expertise_fraction must lie in (0, 1)");
  c.seed = detail::take<std::uint64_t>(j, "seed", c.seed);
  c.alpha = detail::take<double>(j, "alpha", c.alpha);
  c.beta = detail::take<double>(j, "beta", c.beta);
  if (!(c.alpha > c.beta && c.beta > 0.0))
    throw DataError("weights must satisfy alpha > beta > 0");
  c.conf_source = detail::take<std::string>(j, "conf_source", c.conf_source);
  if (c.conf_source != "logit" && c.conf_source != "self-report" &&
      c.conf_source != "none")
    throw DataError("conf_source must be logit, self-report or none");
  c.preserve_policy = detail::take<bool>(j, "preserve_policy", c.preserve_policy);
  c.debate_rounds = detail::take<int>(j, "debate_rounds", c.debate_rounds);
  if (c.debate_rounds < 1) throw DataError("debate_rounds must be at least 1");
  c.parallelism = detail::take<int>(j, "parallelism", c.parallelism);
  if (c.parallelism < 1) throw DataError("parallelism must be at least 1");
  c.cache_path = detail::take<std::string>(j, "cache_path", c.cache_path);
  c.output_dir = detail::take<std::string>(j, "output_dir", c.output_dir);
  if (c.cache_path.empty() || c.output_dir.empty())
    throw DataError("cache_path and output_dir must be non-empty");
  c.scoring_prompt = detail::take<std::string>(j, "scoring_prompt", c.scoring_prompt);
  if (c.scoring_prompt != "expert-role" && c.scoring_prompt != "neutral")
    throw DataError("scoring_prompt must be expert-role or neutral");
  c.stratify_by_language =
      detail::take<bool>(j, "stratify_by_language", c.stratify_by_language);
  if (j.contains("aliases")) {
    if (!j["aliases"].is_object())
      throw DataError("aliases must map alias text to canonical tokens");
    for (const auto& [alias, target] : j["aliases"].items()) {
      if (!target.is_string())
        throw DataError("alias '" + alias + "' must map to a canonical token");
      c.aliases[alias] = target.get<std::string>();
    }
  }
  c.template_dir = detail::take<std::string>(j, "template_dir", c.template_dir);
  c.max_attempts = detail::take<int>(j, "max_attempts", c.max_attempts);
  if (c.max_attempts < 1) throw DataError("max_attempts must be at least 1");
  c.backoff_ms = detail::take<int>(j, "backoff_ms", c.backoff_ms);
  if (c.backoff_ms < 0) throw DataError("backoff_ms must not be negative");
  c.temperature = detail::take<double>(j, "temperature", c.temperature);
  c.max_tokens = detail::take<int>(j, "max_tokens", c.max_tokens);
  if (c.max_tokens < 1) throw DataError("max_tokens must be at least 1");
  c.request_logprobs = detail::take<bool>(j, "request_logprobs", c.request_logprobs);
  return c;
}

inline RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open config file: " + file.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError("config is not valid JSON: " + file.string());
  return parse_config(j);
}

// Everything that affects computed result bytes. Deploy-site paths
// (output_dir, cache_path) stay out so the same experiment replays anywhere.
inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json backends = nlohmann::json::array();
  for (const BackendConfig& b : c.backends) {
    nlohmann::json bj;
    bj["name"] = b.name;
    bj["kind"] = b.kind;
    if (!b.endpoint.empty()) bj["endpoint"] = b.endpoint;
    if (!b.model.empty()) bj["model"] = b.model;
    if (!b.auth_env.empty()) bj["auth_env"] = b.auth_env;
    if (!b.script.empty()) bj["script"] = b.script;
    bj["timeout_seconds"] = b.timeout_seconds;
    backends.push_back(bj);
  }
  nlohmann::json aliases = nlohmann::json::object();
  for (const auto& [alias, target] : c.aliases) aliases[alias] = target;
  nlohmann::json j;
  j["backends"] = backends;
  j["expertise_fraction"] = c.expertise_fraction;
  j["seed"] = c.seed;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["conf_source"] = c.conf_source;
  j["preserve_policy"] = c.preserve_policy;
  j["debate_rounds"] = c.debate_rounds;
  j["parallelism"] = c.parallelism;
  j["scoring_prompt"] = c.scoring_prompt;
  j["stratify_by_language"] = c.stratify_by_language;
  j["aliases"] = aliases;
  j["template_dir"] = c.template_dir;
  j["max_attempts"] = c.max_attempts;
  j["backoff_ms"] = c.backoff_ms;
  j["temperature"] = c.temperature;
  j["max_tokens"] = c.max_tokens;
  j["request_logprobs"] = c.request_logprobs;
  return j;
}

inline AliasTable build_aliases(const RunConfig& c) {
  AliasTable table = AliasTable::with_defaults();
  for (const auto& [alias, target] : c.aliases) {
    std::optional<ComplexityClass> cls;
    for (ComplexityClass candidate : all_classes())
      if (canonical_token(candidate) == target) cls = candidate;
    if (!cls)
      throw DataError("alias '" + alias + "' maps to '" + target +
                      "', which is not a canonical class token");
    try {
      table.add(alias, *cls);
    } catch (const std::invalid_argument& ex) {
      throw DataError(std::string("config alias rejected: ") + ex.what());
    }
  }
  return table;
}

// Asset paths inside the config (templates, backend scripts) resolve against
// the config file's directory; output_dir and cache_path resolve against the
// working directory and output_dir respectively.
inline std::filesystem::path resolve_against(const std::filesystem::path& base,
                                             const std::string& path) {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : base / p;
}

inline PromptLibrary build_prompts(const RunConfig& c,
                                   const std::filesystem::path& config_dir) {
  if (c.template_dir.empty()) return PromptLibrary::builtin();
  return PromptLibrary::from_directory(resolve_against(config_dir, c.template_dir));
}

inline DecodingParams decoding_params(const RunConfig& c) {
  DecodingParams p;
  p.temperature = c.temperature;
  p.max_tokens = c.max_tokens;
  p.request_logprobs = c.request_logprobs;
  return p;
}

inline std::filesystem::path resolved_cache_path(const RunConfig& c) {
  std::filesystem::path cache(c.cache_path);
  return cache.is_absolute() ? cache : std::filesystem::path(c.output_dir) / cache;
}

inline BackendPool build_pool(const RunConfig& c,
                              const std::filesystem::path& config_dir,
                              std::shared_ptr<TokenLedger> ledger,
                              bool with_cache = true) {
  BackendPool pool;
  RetryPolicy retry{c.max_attempts, std::chrono::milliseconds(c.backoff_ms)};
  for (const BackendConfig& b : c.backends) {
    std::unique_ptr<Transport> transport;
    if (b.kind == "scripted") {
      transport = ScriptedTransport::from_file(resolve_against(config_dir, b.script));
    } else {
      HttpEndpoint endpoint;
      endpoint.base_url = b.endpoint;
      endpoint.model = b.model;
      endpoint.auth_env = b.auth_env;
      endpoint.timeout_seconds = b.timeout_seconds;
      transport = std::make_unique<HttpTransport>(endpoint);
    }
    pool.add({b.name, b.kind == "scripted" ? "scripted:" + b.script : b.endpoint},
             std::move(transport), retry);
  }
  if (ledger) pool.attach_ledger(std::move(ledger));
  if (with_cache) {
    std::filesystem::path cache = resolved_cache_path(c);
    if (cache.has_parent_path())
      std::filesystem::create_directories(cache.parent_path());
    pool.attach_cache(std::make_shared<CompletionCache>(cache));
  }
  return pool;
}

}  // namespace quorum
